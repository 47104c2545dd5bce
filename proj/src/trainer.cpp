#include "wmf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "json.hpp"
#include "wmf/metrics.hpp"
#include "wmf/ops.hpp"

namespace wmf {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  require(batch >= 1, ErrorKind::Config, "batch must be >= 1");
  require(steps >= 0, ErrorKind::Config, "steps must be >= 0");
  require(eval_every >= 0 && checkpoint_every >= 0, ErrorKind::Config, "cadences must be >= 0");
  require(eval_holdout >= 0, ErrorKind::Config, "eval_holdout must be >= 0");
  optim.validate();
  loss.validate();
}

std::string config_to_json(const NetworkConfig& n, const TrainConfig& t) {
  const json j{
      {"base_channels", n.base_channels},
      {"blocks_per_level", n.blocks_per_level},
      {"heads_per_level", n.heads_per_level},
      {"ffn_expansion", n.ffn_expansion},
      {"gdfn", n.gdfn_enabled},
      {"gdfn_dconv", n.gdfn_dconv},
      {"nested", n.nested_enabled},
      {"deep_sup", n.deep_supervision_enabled},
      {"batch", t.batch},
      {"steps", t.steps},
      {"seed", t.seed},
      {"lr", t.optim.lr},
      {"beta1", t.optim.beta1},
      {"beta2", t.optim.beta2},
      {"adam_eps", t.optim.eps},
      {"weight_decay", t.optim.weight_decay},
      {"lambda_depth", t.loss.depth},
      {"lambda_mask", t.loss.mask},
      {"lambda_perc", t.loss.perceptual},
      {"eval_every", t.eval_every},
      {"checkpoint_every", t.checkpoint_every},
      {"eval_holdout", t.eval_holdout},
      {"extractor_seed", t.extractor_seed},
  };
  return j.dump();
}

void config_from_json(const std::string& text, NetworkConfig& n, TrainConfig& t) {
  try {
    const json j = json::parse(text);
    n.base_channels = j.at("base_channels");
    n.blocks_per_level = j.at("blocks_per_level");
    n.heads_per_level = j.at("heads_per_level");
    n.ffn_expansion = j.at("ffn_expansion");
    n.gdfn_enabled = j.at("gdfn");
    n.gdfn_dconv = j.at("gdfn_dconv");
    n.nested_enabled = j.at("nested");
    n.deep_supervision_enabled = j.at("deep_sup");
    t.batch = j.at("batch");
    t.steps = j.at("steps");
    t.seed = j.at("seed");
    t.optim.lr = j.at("lr");
    t.optim.beta1 = j.at("beta1");
    t.optim.beta2 = j.at("beta2");
    t.optim.eps = j.at("adam_eps");
    t.optim.weight_decay = j.at("weight_decay");
    t.loss.depth = j.at("lambda_depth");
    t.loss.mask = j.at("lambda_mask");
    t.loss.perceptual = j.at("lambda_perc");
    t.eval_every = j.at("eval_every");
    t.checkpoint_every = j.at("checkpoint_every");
    t.eval_holdout = j.at("eval_holdout");
    t.extractor_seed = j.at("extractor_seed");
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("bad configuration record: ") + e.what());
  }
  n.validate();
  t.validate();
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path wm = dir / "watermarked", bg = dir / "background", mk = dir / "mask";
  for (const fs::path& p : {wm, bg, mk})
    require(fs::is_directory(p), ErrorKind::Io, "dataset directory missing: " + p.string());
  Dataset d;
  for (const fs::path& p : list_pngs(wm)) {
    const std::string name = p.filename().string();
    d.names.push_back(name);
    d.watermarked.push_back(read_png(p, 3));
    d.background.push_back(read_png(bg / name, 3));
    d.mask.push_back(read_png(mk / name, 1));
    const Image& j = d.watermarked.back();
    require(d.background.back().same_shape(j) && d.mask.back().height == j.height && d.mask.back().width == j.width,
            ErrorKind::Shape, "sample " + name + " has inconsistent extents");
    require(j.same_shape(d.watermarked.front()), ErrorKind::Shape, "sample " + name + " differs in size from the first");
  }
  require(d.size() > 0, ErrorKind::Input, "dataset is empty: " + wm.string());
  return d;
}

Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, DType dtype) {
  std::vector<Image> j, i, m;
  for (std::size_t k : indices) {
    j.push_back(data.watermarked.at(k));
    i.push_back(data.background.at(k));
    m.push_back(data.mask.at(k));
  }
  return {to_tensor(j, dtype), to_tensor(i, dtype), to_tensor(m, dtype)};
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string EvalSummary::to_json() const {
  return json{{"samples", samples}, {"psnr", finite_or_null(psnr)}, {"ssim", finite_or_null(ssim)},
              {"rmse", finite_or_null(rmse)}, {"rmse_w", optional_number(rmse_w)}, {"f1", finite_or_null(f1)},
              {"iou", finite_or_null(iou)}, {"psnr_identity", finite_or_null(psnr_identity)}}
      .dump();
}

EvalSummary evaluate_model(const ModelParams& model, const Dataset& data, const std::vector<std::size_t>& indices,
                           std::size_t batch) {
  EvalSummary s;
  std::size_t weighted = 0;
  double rmse_w_sum = 0;
  NoGradScope no_grad;
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::vector<std::size_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                         indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + batch)));
    const Batch b = make_batch(data, chunk);
    const ForwardOutputs out = forward(b.watermarked, model, Mode::Infer);
    const DepthOutput& d = out.final_output();
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const std::size_t idx = chunk[k];
      const Image pred = from_tensor(d.image, static_cast<std::int64_t>(k));
      const Image pmask = from_tensor(d.mask, static_cast<std::int64_t>(k));
      const Image& truth = data.background[idx];
      s.psnr += metrics::psnr(pred, truth);
      s.ssim += truth.height >= 11 && truth.width >= 11 ? metrics::ssim(pred, truth) : std::nan("");
      s.rmse += metrics::rmse(pred, truth);
      if (const auto w = metrics::rmse_w(pred, truth, data.mask[idx])) {
        rmse_w_sum += *w;
        ++weighted;
      }
      const metrics::MaskScores ms = metrics::f1_iou(pmask, data.mask[idx]);
      s.f1 += ms.f1;
      s.iou += ms.iou;
      s.psnr_identity += metrics::psnr(data.watermarked[idx], truth);
      ++s.samples;
    }
  }
  if (s.samples > 0) {
    const double n = static_cast<double>(s.samples);
    s.psnr /= n;
    s.ssim /= n;
    s.rmse /= n;
    s.f1 /= n;
    s.iou /= n;
    s.psnr_identity /= n;
  }
  if (weighted > 0) s.rmse_w = rmse_w_sum / static_cast<double>(weighted);
  return s;
}

std::string StepLog::to_json() const {
  json image = json::array({nullptr, nullptr, nullptr}), mask = image, perc = image;
  for (const DepthTerms& t : terms) {
    const auto d = static_cast<std::size_t>(t.depth - 1);
    image[d] = t.image;
    mask[d] = t.mask;
    perc[d] = t.perceptual;
  }
  json j{{"step", step}, {"loss_total", loss_total}, {"loss_image_d", image}, {"loss_mask_d", mask},
         {"loss_perc_d", perc}};
  if (eval) j["eval"] = json::parse(eval->to_json());
  return j.dump();
}

namespace {

constexpr const char* kConfigEntry = "meta.config";
constexpr const char* kStepEntry = "train.step";
constexpr const char* kAdamStepEntry = "train.adam_t";
constexpr const char* kRngEntry = "train.rng";
constexpr const char* kQueueEntry = "train.queue";
const std::string kMomentM = "adam.m.", kMomentV = "adam.v.";

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

// Rebuilds the model described by the checkpoint and loads its tensors.
// Every entry must be known; optimizer/trainer entries are accepted.
ModelParams restore_model(const CheckpointFile& file, NetworkConfig& network, TrainConfig& train) {
  config_from_json(file.bytes(kConfigEntry), network, train);
  ModelParams model = init_model(network, train.seed);
  std::set<std::string> names;
  for (auto& [name, t] : model.named_parameters()) {
    names.insert(name);
    require(file.contains(name), ErrorKind::Format, "checkpoint lacks tensor " + name);
    file.load_into(name, t);
  }
  const std::set<std::string> meta{kConfigEntry, kStepEntry, kAdamStepEntry, kRngEntry, kQueueEntry};
  for (const CheckpointEntry& e : file.entries()) {
    if (names.count(e.name) || meta.count(e.name)) continue;
    const bool moment = (starts_with(e.name, kMomentM) && names.count(e.name.substr(kMomentM.size()))) ||
                        (starts_with(e.name, kMomentV) && names.count(e.name.substr(kMomentV.size())));
    require(moment, ErrorKind::Format, "unknown tensor name in checkpoint: " + e.name);
  }
  return model;
}

}  // namespace

void store_model(CheckpointFile& file, const ModelParams& model, const TrainConfig& train) {
  file.put_bytes(kConfigEntry, config_to_json(model.config, train));
  for (const auto& [name, t] : model.named_parameters()) file.put_tensor(name, t);
}

ModelParams load_model(const CheckpointFile& file) {
  NetworkConfig network;
  TrainConfig train;
  return restore_model(file, network, train);
}

Trainer::Trainer(const NetworkConfig& network, const TrainConfig& train, Dataset data)
    : Trainer(init_model(network, train.seed), train, std::move(data)) {}

Trainer::Trainer(ModelParams model, const TrainConfig& train, Dataset data)
    : train_(train),
      data_(std::move(data)),
      model_(std::move(model)),
      optim_(train.optim),
      extractor_(train.extractor_seed, 3, default_dtype()),
      rng_(derive_seed(train.seed, 0xba7c4ULL)) {
  train_.validate();
  require(data_.size() > 0, ErrorKind::Input, "training needs at least one sample");
  require(static_cast<std::size_t>(train_.eval_holdout) < data_.size(), ErrorKind::Config,
          "eval_holdout must leave at least one training sample");
  for (auto& [name, t] : model_.named_parameters()) t.set_requires_grad(true);
}

Trainer Trainer::resume(const CheckpointFile& file, Dataset data, std::optional<std::int64_t> steps) {
  NetworkConfig network;
  TrainConfig train;
  ModelParams model = restore_model(file, network, train);
  if (steps) train.steps = *steps;
  Trainer t(std::move(model), train, std::move(data));
  t.step_ = file.i64(kStepEntry).at(0);
  t.optim_.set_steps_taken(file.i64(kAdamStepEntry).at(0));
  t.rng_.set_state(file.bytes(kRngEntry));
  t.queue_ = file.i64(kQueueEntry);
  for (std::int64_t i : t.queue_)
    require(i >= 0 && static_cast<std::size_t>(i) < t.train_indices().size(), ErrorKind::Format,
            "checkpoint sample order does not match the dataset");
  for (const auto& [name, p] : t.model_.named_parameters()) {
    if (!file.contains(kMomentM + name)) continue;
    AdamW::Moments mo{Tensor::zeros(p.shape(), p.dtype()), Tensor::zeros(p.shape(), p.dtype())};
    file.load_into(kMomentM + name, mo.m);
    file.load_into(kMomentV + name, mo.v);
    t.optim_.moments().emplace(name, std::move(mo));
  }
  return t;
}

std::vector<std::size_t> Trainer::train_indices() const {
  std::vector<std::size_t> out(data_.size() - static_cast<std::size_t>(train_.eval_holdout));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

std::vector<std::size_t> Trainer::eval_indices() const {
  if (train_.eval_holdout == 0) return train_indices();
  std::vector<std::size_t> out;
  for (std::size_t i = data_.size() - static_cast<std::size_t>(train_.eval_holdout); i < data_.size(); ++i)
    out.push_back(i);
  return out;
}

std::vector<std::size_t> Trainer::next_batch() {
  std::vector<std::size_t> batch;
  const std::size_t n = train_indices().size();
  while (batch.size() < static_cast<std::size_t>(train_.batch)) {
    if (queue_.empty()) {
      queue_.resize(n);
      for (std::size_t i = 0; i < n; ++i) queue_[i] = static_cast<std::int64_t>(i);
      for (std::size_t i = n; i > 1; --i) std::swap(queue_[i - 1], queue_[rng_.below(i)]);
    }
    batch.push_back(static_cast<std::size_t>(queue_.front()));
    queue_.erase(queue_.begin());
  }
  return batch;
}

StepLog Trainer::step() {
  const Batch b = make_batch(data_, next_batch());
  const NamedTensors params = model_.named_parameters();
  StepLog log;
  {
    Tape tape;
    TapeScope scope(tape);
    const ForwardOutputs out = forward(b.watermarked, model_, Mode::Train);
    const LossResult loss = total_loss(out, b.background, b.mask, train_.loss, extractor_);
    log.loss_total = loss.total.item();
    require(std::isfinite(log.loss_total), ErrorKind::Numeric,
            "training diverged at step " + std::to_string(step_ + 1) + ": loss is not finite");
    log.terms = loss.terms;
    tape.backward(loss.total);
  }
  optim_.step(params);
  for (const auto& [name, t] : params) Tensor(t).zero_grad();
  log.step = ++step_;
  if (train_.eval_every > 0 && (step_ % train_.eval_every == 0 || step_ == train_.steps)) log.eval = evaluate();
  return log;
}

void Trainer::run(const std::function<void(const StepLog&)>& on_log,
                  const std::function<void(const CheckpointFile&)>& on_checkpoint) {
  while (step_ < train_.steps) {
    const StepLog log = step();
    if (on_log) on_log(log);
    if (on_checkpoint && train_.checkpoint_every > 0 && step_ % train_.checkpoint_every == 0 && step_ < train_.steps)
      on_checkpoint(checkpoint());
  }
  if (on_checkpoint) on_checkpoint(checkpoint());
}

CheckpointFile Trainer::checkpoint() const {
  CheckpointFile file;
  store_model(file, model_, train_);
  for (const auto& [name, mo] : optim_.moments()) {
    file.put_tensor(kMomentM + name, mo.m);
    file.put_tensor(kMomentV + name, mo.v);
  }
  file.put_i64(kStepEntry, {step_});
  file.put_i64(kAdamStepEntry, {optim_.steps_taken()});
  file.put_bytes(kRngEntry, rng_.state());
  file.put_i64(kQueueEntry, queue_);
  return file;
}

EvalSummary Trainer::evaluate() const { return evaluate_model(model_, data_, eval_indices()); }

}  // namespace wmf
