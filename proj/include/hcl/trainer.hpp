#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hcl/augment.hpp"
#include "hcl/checkpoint.hpp"
#include "hcl/config.hpp"
#include "hcl/contrast.hpp"
#include "hcl/data.hpp"
#include "hcl/eval_protocol.hpp"
#include "hcl/models.hpp"

namespace hcl::pipeline {

inline double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                      std::to_string(total_steps) + "]");
  return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(step) / double(total_steps)));
}

struct MetricsRow {
  long step = 0;
  int epoch = 0;
  int stage = 1;
  double loss = 0.0;
  double lr = 0.0;
  double top1 = 0.0;
  double wall_clock_s = 0.0;
};

inline void to_json(nlohmann::json& j, const MetricsRow& r) {
  j = nlohmann::json{{"step", r.step},   {"epoch", r.epoch}, {"stage", r.stage},
                     {"loss", r.loss},   {"lr", r.lr},       {"top1", r.top1},
                     {"wall_clock_s", r.wall_clock_s}};
}

inline void from_json(const nlohmann::json& j, MetricsRow& r) {
  j.at("step").get_to(r.step);
  j.at("epoch").get_to(r.epoch);
  j.at("stage").get_to(r.stage);
  j.at("loss").get_to(r.loss);
  j.at("lr").get_to(r.lr);
  j.at("top1").get_to(r.top1);
  j.at("wall_clock_s").get_to(r.wall_clock_s);
}

inline void write_metrics_jsonl(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw serial::IoError("cannot open metrics file '" + path + "'");
  for (const auto& r : rows) out << nlohmann::json(r).dump() << "\n";
}

inline std::vector<MetricsRow> read_metrics_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw serial::IoError("cannot open metrics file '" + path + "'");
  std::vector<MetricsRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(nlohmann::json::parse(line).get<MetricsRow>());
  }
  return rows;
}

// dataset assembly and the train/eval holdout split

inline data::Dataset build_dataset(const Config& cfg) {
  if (cfg.data_source == "synthetic")
    return data::generate_synthetic(cfg.seed, cfg.data_synthetic_n, cfg.data_image_size);
  return data::load_corpus(cfg.data_corpus_path, cfg.data_image_size);
}

inline data::Dataset slice_dataset(const data::Dataset& ds, std::size_t begin, std::size_t end) {
  data::Dataset out;
  out.size = ds.size;
  out.records.assign(ds.records.begin() + long(begin), ds.records.begin() + long(end));
  return out;
}

inline data::Dataset train_split(const data::Dataset& ds, double holdout) {
  const auto n = ds.records.size();
  const auto train_n = std::size_t(std::llround(double(n) * (1.0 - holdout)));
  return slice_dataset(ds, 0, std::max<std::size_t>(1, train_n));
}

inline data::Dataset eval_split(const data::Dataset& ds, double holdout) {
  if (holdout <= 0.0) return ds;
  const auto n = ds.records.size();
  const auto train_n = std::size_t(std::llround(double(n) * (1.0 - holdout)));
  if (train_n >= n) return ds;
  return slice_dataset(ds, train_n, n);
}

// SGD with momentum and decoupled-from-nothing weight decay folded into the
// gradient, the conventional v = mu*v + (g + wd*w); w -= lr*v form.
struct SgdState {
  std::vector<VecX<float>> velocity;

  void init(const models::ParamSet<float>& ps) {
    velocity.clear();
    for (const auto& [name, t] : ps.items()) velocity.push_back(VecX<float>::Zero(t.numel()));
  }

  void step(models::ParamSet<float>& ps, float lr, float momentum, float weight_decay) {
    for (std::size_t i = 0; i < ps.items().size(); ++i) {
      const auto& t = ps.items()[i].second;
      VecX<float>& v = velocity[i];
      v = momentum * v + (t.grad() + weight_decay * t.values());
      t.values() -= lr * v;
      t.zero_grad();
    }
  }
};

struct TrainOutput {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
};

namespace detail {

struct StageSetup {
  models::ParamSet<float> query_params;
  models::ParamSet<float> key_params;
  models::HclModel<float> query_model;
  models::HclModel<float> key_model;
  std::vector<std::uint8_t> init_rng_state;
};

inline StageSetup setup_stage(const Config& cfg, int stage, const Checkpoint* warm_start) {
  StageSetup s;
  Rng init_rng = derive_rng(cfg.seed, {stream::kInit, std::uint64_t(stage)});
  if (stage == 1) {
    s.query_params = models::init_backbone_g1_params<float>(cfg.model, init_rng);
  } else {
    if (!warm_start) throw ConfigError("stage 2 needs a stage-1 checkpoint");
    if (warm_start->stage != 1)
      throw ConfigError("stage 2 expects a stage-1 checkpoint, got stage " +
                        std::to_string(int(warm_start->stage)));
    s.query_params = param_set_from_checkpoint(*warm_start, "", true);
    models::add_g2_params(s.query_params, cfg.model, init_rng);  // spatial head starts fresh
  }
  for (const auto& [name, t] : s.query_params.items()) t.set_requires_grad(true);
  s.query_model = models::HclModel<float>(cfg.model, s.query_params, stage == 2);
  s.key_params = s.query_params.clone_values(false);
  s.key_model = models::HclModel<float>(cfg.model, s.key_params, stage == 2);
  s.init_rng_state = init_rng.serialize();
  return s;
}

inline Tensor<float> view_tensor(const data::ImageRecord& rec, const augment::AugConfig& aug,
                                 std::uint64_t seed, std::uint64_t stream_tag,
                                 std::uint64_t stage, std::uint64_t epoch) {
  Rng rng = derive_rng(seed, {stream_tag, stage, epoch, std::uint64_t(rec.id)});
  const auto rect = augment::sample_view(rng, rec.pixels.height, rec.pixels.width, aug);
  return augment::apply_view(rec.pixels, rect, aug, rng).to_tensor();
}

// One full shuffled pass of key-encoder embeddings to populate the queue
// before the first loss is computed.
inline void warm_queue(contrast::MemoryQueue<float>& queue, const models::HclModel<float>& key_model,
                       const data::Dataset& ds, const Config& cfg, int stage) {
  const Index n = Index(ds.records.size());
  const auto order = data::epoch_batches(n, n, mix_seed(cfg.seed, stream::kWarmup), Index(stage))[0];
  Tape<float> tape = Tape<float>::inference();
  for (Index idx : order) {
    const auto& rec = ds.records[std::size_t(idx)];
    auto x = view_tensor(rec, cfg.aug, cfg.seed, stream::kWarmup, std::uint64_t(stage), 0);
    auto emb = key_model.embed_train(tape, x);
    queue.push(emb.values());
  }
}

}  // namespace detail

// One contrastive pre-training stage: stage 1 trains backbone + semantic
// head on semantic-only embeddings; stage 2 continues from a stage-1
// checkpoint with a fresh spatial head and concatenated embeddings (the
// queue is rebuilt at the new dimension and re-warmed). Optimizer state is
// reset at the stage boundary.
inline TrainOutput train_stage(const Config& cfg, int stage, const Checkpoint* warm_start,
                               const data::Dataset& full_dataset) {
  const auto t_start = std::chrono::steady_clock::now();
  auto ds = train_split(full_dataset, cfg.data_holdout_fraction);
  if (Index(ds.records.size()) < cfg.batch_size)
    throw ConfigError("dataset smaller than one batch");

  auto s = detail::setup_stage(cfg, stage, warm_start);
  const Index dim = s.query_model.embed_dim();
  contrast::MemoryQueue<float> queue(cfg.queue_capacity, dim);
  detail::warm_queue(queue, s.key_model, ds, cfg, stage);

  SgdState sgd;
  sgd.init(s.query_params);

  const Index n = Index(ds.records.size());
  const int epochs = stage == 1 ? cfg.stage1_epochs : cfg.stage2_epochs;
  const long steps_per_epoch = long((n + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = std::max<long>(1, long(epochs) * steps_per_epoch);
  const float temperature = float(cfg.temperature);

  TrainOutput out;
  long step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto batches =
        data::epoch_batches(n, cfg.batch_size, mix_seed(cfg.seed, std::uint64_t(stage)), epoch);
    for (const auto& batch : batches) {
      const double lr = cosine_lr(step, total_steps, cfg.lr0);
      Tape<float> tape;
      Tape<float> inference = Tape<float>::inference();

      Tensor<float> loss_sum;
      MatX<float> keys(Index(batch.size()), dim);
      long top1_hits = 0;
      for (std::size_t bi = 0; bi < batch.size(); ++bi) {
        const auto& rec = ds.records[std::size_t(batch[bi])];
        auto x_query = detail::view_tensor(rec, cfg.aug, cfg.seed, stream::kAugView1,
                                           std::uint64_t(stage), std::uint64_t(epoch));
        auto x_key = detail::view_tensor(rec, cfg.aug, cfg.seed, stream::kAugView2,
                                         std::uint64_t(stage), std::uint64_t(epoch));
        auto q = s.query_model.embed_train(tape, x_query);
        auto k = s.key_model.embed_train(inference, x_key);
        keys.row(Index(bi)) = k.values().transpose();

        auto sample_loss = contrast::info_nce_loss(tape, q, k, queue, temperature);
        loss_sum = loss_sum.defined() ? ops::add(tape, loss_sum, sample_loss) : sample_loss;

        // in-batch instance-discrimination probe against the same queue
        const float s_pos = q.values().dot(k.values());
        float s_max = -std::numeric_limits<float>::infinity();
        for (Index i = 0; i < queue.filled(); ++i)
          s_max = std::max(s_max, float(q.values().dot(queue.row_by_age(i))));
        top1_hits += s_pos > s_max;
      }
      auto loss = ops::scale(tape, loss_sum, 1.0f / float(batch.size()));
      tape.backward(loss);
      sgd.step(s.query_params, float(lr), float(cfg.sgd_momentum), float(cfg.weight_decay));
      contrast::momentum_update(s.key_params, s.query_params, float(cfg.key_momentum));
      queue.push_batch(keys);

      MetricsRow row;
      row.step = step;
      row.epoch = epoch;
      row.stage = stage;
      row.loss = double(loss.value());
      row.lr = lr;
      row.top1 = double(top1_hits) / double(batch.size());
      row.wall_clock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      out.metrics.push_back(row);
      ++step;
    }
  }

  Checkpoint ckpt;
  ckpt.stage = std::uint8_t(stage);
  ckpt.step = std::uint64_t(step);
  append_param_set(ckpt, s.query_params);
  append_param_set(ckpt, s.key_params, "key.");
  ckpt.queue_filled = std::uint32_t(queue.filled());
  ckpt.queue_dim = std::uint32_t(queue.dim());
  ckpt.queue_rows.reserve(std::size_t(queue.filled()) * std::size_t(queue.dim()));
  for (Index i = 0; i < queue.filled(); ++i) {
    const auto row = queue.row_by_age(i);
    ckpt.queue_rows.insert(ckpt.queue_rows.end(), row.data(), row.data() + row.size());
  }
  ckpt.rng_state = s.init_rng_state;
  out.checkpoint = std::move(ckpt);
  return out;
}

inline TrainOutput train_stage1(const Config& cfg, const data::Dataset& ds) {
  return train_stage(cfg, 1, nullptr, ds);
}

inline TrainOutput train_stage2(const Config& cfg, const Checkpoint& stage1,
                                const data::Dataset& ds) {
  return train_stage(cfg, 2, &stage1, ds);
}

// binds the query model stored in a checkpoint

struct BoundModel {
  models::ParamSet<float> params;
  models::HclModel<float> model;
  int stage = 1;
};

inline BoundModel bind_checkpoint_model(const Config& cfg, const Checkpoint& ckpt) {
  BoundModel b;
  b.stage = int(ckpt.stage);
  b.params = param_set_from_checkpoint(ckpt, "", false);
  b.model = models::HclModel<float>(cfg.model, b.params, b.stage == 2);
  return b;
}

// Frozen-encoder bridge into the offline analysis protocols.
inline eval::Encoder make_encoder(std::shared_ptr<BoundModel> bound) {
  return [bound](const eval::ViewSample& sample) {
    Tape<float> tape = Tape<float>::inference();
    auto emb = bound->model.embed(tape, sample.view.to_tensor());
    eval::BranchEmbedding out;
    out.semantic = emb.semantic.values().cast<double>();
    if (bound->model.has_spatial()) out.spatial = emb.spatial.values().cast<double>();
    return out;
  };
}

// embedding export

inline constexpr char kEmbeddingMagic[4] = {'H', 'E', 'M', 'B'};

enum class Branch { Semantic, Spatial, Concat };

inline Branch branch_from_name(const std::string& name) {
  if (name == "semantic") return Branch::Semantic;
  if (name == "spatial") return Branch::Spatial;
  if (name == "concat") return Branch::Concat;
  throw ConfigError("branch must be semantic, spatial or concat, got '" + name + "'");
}

// One row per record in dataset order, encoded deterministically from the
// full image (identity view). The non-selected branch is written as zeros;
// header dims always reflect the checkpointed model.
inline void export_embeddings(const Config& cfg, const Checkpoint& ckpt,
                              const data::Dataset& ds, const std::string& path, Branch branch) {
  auto bound = std::make_shared<BoundModel>(bind_checkpoint_model(cfg, ckpt));
  const bool has_spatial = bound->model.has_spatial();
  if (!has_spatial && branch == Branch::Spatial)
    throw ConfigError("stage-1 checkpoint has no spatial branch to export");
  const std::uint32_t d_sem = std::uint32_t(cfg.model.head.d_sem);
  const std::uint32_t d_spa =
      has_spatial ? std::uint32_t(cfg.model.head.spatial_res * cfg.model.head.spatial_res) : 0;

  std::vector<std::uint8_t> out;
  serial::put_bytes(out, kEmbeddingMagic, 4);
  serial::put_le(out, std::uint32_t(1));
  serial::put_le(out, std::uint64_t(ds.records.size()));
  serial::put_le(out, d_sem);
  serial::put_le(out, d_spa);

  Tape<float> tape = Tape<float>::inference();
  for (const auto& rec : ds.records) {
    augment::ViewRect full{0, 0, rec.pixels.width, rec.pixels.height, false};
    auto view = augment::crop_resize(rec.pixels, full, cfg.model.backbone.input_size);
    auto emb = bound->model.embed(tape, view.to_tensor());
    serial::put_le(out, std::uint64_t(rec.id));
    const bool want_sem = branch != Branch::Spatial;
    const bool want_spa = branch != Branch::Semantic && has_spatial;
    for (std::uint32_t i = 0; i < d_sem; ++i)
      serial::put_f32(out, want_sem ? emb.semantic.values()[Index(i)] : 0.0f);
    for (std::uint32_t i = 0; i < d_spa; ++i)
      serial::put_f32(out, want_spa ? emb.spatial.values()[Index(i)] : 0.0f);
  }
  serial::write_file(path, out);
}

struct EmbeddingFile {
  std::uint64_t n = 0;
  std::uint32_t d_sem = 0;
  std::uint32_t d_spa = 0;
  std::vector<std::int64_t> ids;
  Eigen::MatrixXf rows;  // n x (d_sem + d_spa)
};

inline EmbeddingFile read_embeddings(const std::string& path) {
  const auto buf = serial::read_file(path);
  serial::Cursor cur(buf);
  const std::uint8_t* magic = cur.take(4, "magic");
  if (std::memcmp(magic, kEmbeddingMagic, 4) != 0)
    throw serial::ParseError("not an embedding file (bad magic)");
  const auto version = cur.get_le<std::uint32_t>("version");
  if (version != 1)
    throw serial::ParseError("unsupported embedding file version " + std::to_string(version));
  EmbeddingFile f;
  f.n = cur.get_le<std::uint64_t>("record count");
  f.d_sem = cur.get_le<std::uint32_t>("semantic dim");
  f.d_spa = cur.get_le<std::uint32_t>("spatial dim");
  const Index width = Index(f.d_sem) + Index(f.d_spa);
  f.rows.resize(Index(f.n), width);
  f.ids.resize(f.n);
  for (std::uint64_t r = 0; r < f.n; ++r) {
    f.ids[r] = std::int64_t(cur.get_le<std::uint64_t>("record id"));
    for (Index c = 0; c < width; ++c) f.rows(Index(r), c) = cur.get_f32("embedding value");
  }
  if (cur.remaining() != 0) throw serial::ParseError("embedding file has trailing bytes");
  return f;
}

}  // namespace hcl::pipeline
