#pragma once

#include <json.hpp>

#include "hcl/eval_protocol.hpp"

// JSON bindings for the analysis reports.
namespace hcl::eval {

inline void to_json(nlohmann::json& j, const ContrastiveTestResult& r) {
  j = nlohmann::json{{"total", r.total}, {"hits", r.hits}, {"accuracy", r.accuracy}};
}

inline void from_json(const nlohmann::json& j, ContrastiveTestResult& r) {
  j.at("total").get_to(r.total);
  j.at("hits").get_to(r.hits);
  j.at("accuracy").get_to(r.accuracy);
}

inline void to_json(nlohmann::json& j, const IoUBinReport& r) {
  j = nlohmann::json{{"bin_edges", r.bin_edges},
                     {"counts", r.counts},
                     {"accuracy", r.accuracy},
                     {"total", r.total},
                     {"overall_accuracy", r.overall_accuracy}};
}

inline void from_json(const nlohmann::json& j, IoUBinReport& r) {
  j.at("bin_edges").get_to(r.bin_edges);
  j.at("counts").get_to(r.counts);
  j.at("accuracy").get_to(r.accuracy);
  j.at("total").get_to(r.total);
  j.at("overall_accuracy").get_to(r.overall_accuracy);
}

inline void to_json(nlohmann::json& j, const DimSweepRow& r) {
  j = nlohmann::json{{"total_dim", r.total_dim},
                     {"sem_dim", r.sem_dim},
                     {"spa_dim", r.spa_dim},
                     {"accuracy", r.accuracy}};
}

inline void from_json(const nlohmann::json& j, DimSweepRow& r) {
  j.at("total_dim").get_to(r.total_dim);
  j.at("sem_dim").get_to(r.sem_dim);
  j.at("spa_dim").get_to(r.spa_dim);
  j.at("accuracy").get_to(r.accuracy);
}

inline void to_json(nlohmann::json& j, const DimSweepReport& r) {
  j = nlohmann::json{{"mode", r.mode}, {"rows", r.rows}};
}

inline void from_json(const nlohmann::json& j, DimSweepReport& r) {
  j.at("mode").get_to(r.mode);
  j.at("rows").get_to(r.rows);
}

}  // namespace hcl::eval
