#include "cdcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "cdcn/checkpoint.hpp"
#include "cdcn/losses.hpp"
#include "cdcn/optim.hpp"

namespace fs = std::filesystem;

namespace cdcn {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) parts.push_back(part);
  }
  return parts;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw ValueError("trailing garbage");
    return v;
  } catch (const std::exception&) {
    throw ValueError("config key '" + key + "': bad number '" + value + "'");
  }
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    long v = std::stol(value, &used);
    if (used != value.size()) throw ValueError("trailing garbage");
    return v;
  } catch (const std::exception&) {
    throw ValueError("config key '" + key + "': bad integer '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ValueError("config key '" + key + "': bad boolean '" + value + "'");
}

// Explicit Fisher-Yates so the shuffle order depends only on the engine.
void shuffle_indices(std::vector<size_t>& indices, std::mt19937& rng) {
  for (size_t i = indices.size(); i > 1; --i) {
    size_t j = size_t(rng() % uint32_t(i));
    std::swap(indices[i - 1], indices[j]);
  }
}

std::mt19937 make_rng(uint32_t seed, uint32_t epoch, uint32_t salt) {
  std::seed_seq seq{seed, epoch, salt};
  return std::mt19937(seq);
}

struct Batch {
  std::map<Modality, Tensor> inputs;
  Tensor masks;
};

class BatchQueue {
  public:
    explicit BatchQueue(size_t capacity) : capacity_(capacity) {}

    void push(Batch batch) {
        std::unique_lock<std::mutex> lock(mutex_);
        not_full_.wait(lock, [&] { return queue_.size() < capacity_ || closed_; });
        if (closed_) return;
        queue_.push_back(std::move(batch));
        not_empty_.notify_one();
    }

    bool pop(Batch& out) {
        std::unique_lock<std::mutex> lock(mutex_);
        not_empty_.wait(lock, [&] { return !queue_.empty() || done_; });
        if (queue_.empty()) return false;
        out = std::move(queue_.front());
        queue_.pop_front();
        not_full_.notify_one();
        return true;
    }

    void mark_done() {
        std::lock_guard<std::mutex> lock(mutex_);
        done_ = true;
        not_empty_.notify_all();
    }

    void close() {
        std::lock_guard<std::mutex> lock(mutex_);
        closed_ = true;
        done_ = true;
        not_full_.notify_all();
        not_empty_.notify_all();
    }

    bool closed() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return closed_;
    }

  private:
    size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
    std::deque<Batch> queue_;
    bool done_ = false;
    bool closed_ = false;
};

void check_modalities(const std::vector<SampleRecord>& records,
                      const std::vector<Modality>& required) {
  for (const SampleRecord& rec : records) {
    for (Modality m : required) {
      if (!rec.images.count(m))
        throw ValueError("sample '" + rec.id + "' is missing the " +
                         to_string(m) + " modality required by the model");
    }
  }
}

Batch assemble_batch(const std::vector<SampleRecord>& records,
                     const std::vector<size_t>& indices, size_t begin,
                     size_t end, const std::vector<Modality>& modalities,
                     bool do_augment, uint32_t seed, uint32_t epoch) {
  std::vector<SampleRecord> prepared;
  prepared.reserve(end - begin);
  for (size_t k = begin; k < end; ++k) {
    const SampleRecord& rec = records[indices[k]];
    if (do_augment) {
      std::mt19937 rng = make_rng(seed, epoch, uint32_t(indices[k]) + 0x517cc1b7u);
      prepared.push_back(augment(rec, rng));
    } else {
      prepared.push_back(rec);
    }
  }
  Batch batch;
  for (Modality m : modalities) {
    std::vector<Tensor> images;
    images.reserve(prepared.size());
    for (const SampleRecord& rec : prepared) images.push_back(rec.images.at(m));
    batch.inputs[m] = stack_batch(images);
  }
  std::vector<Tensor> masks;
  masks.reserve(prepared.size());
  for (const SampleRecord& rec : prepared) masks.push_back(rec.mask_gt);
  batch.masks = stack_batch(masks);
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ValueError("train config: lr must be positive");
  if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
  if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
  if (weight_decay < 0.0)
    throw ValueError("train config: weight_decay must be non-negative");
  model.validate();
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config: " + path);
  TrainConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string row = trim(line);
    if (row.empty()) continue;
    size_t eq = row.find('=');
    if (eq == std::string::npos)
      throw ValueError(path + ":" + std::to_string(line_no) +
                       ": expected key = value");
    std::string key = trim(row.substr(0, eq));
    std::string value = trim(row.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ValueError(path + ":" + std::to_string(line_no) +
                       ": empty key or value");

    if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "epochs") cfg.epochs = int(parse_long(key, value));
    else if (key == "lr_halve_every") cfg.lr_halve_every = int(parse_long(key, value));
    else if (key == "batch_size") cfg.batch_size = int(parse_long(key, value));
    else if (key == "seed") cfg.seed = uint32_t(parse_long(key, value));
    else if (key == "augment") cfg.augment = parse_bool(key, value);
    else if (key == "threshold") cfg.threshold = parse_threshold_policy(value);
    else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
    else if (key == "train_data") cfg.train_data = value;
    else if (key == "dev_data") cfg.dev_data = value;
    else if (key == "theta") cfg.model.theta = float(parse_double(key, value));
    else if (key == "init_channels") cfg.model.init_channels = int(parse_long(key, value));
    else if (key == "expand_ratio") cfg.model.expand_ratio = float(parse_double(key, value));
    else if (key == "input_size") cfg.model.input_size = int(parse_long(key, value));
    else if (key == "fusion") cfg.model.fusion = parse_fusion(value);
    else if (key == "attention") cfg.model.attention = parse_bool(key, value);
    else if (key == "modalities") {
      cfg.model.modalities.clear();
      for (const std::string& m : split_list(value))
        cfg.model.modalities.push_back(parse_modality(m));
    } else if (key == "score_weights") {
      cfg.model.score_weights.clear();
      for (const std::string& w : split_list(value))
        cfg.model.score_weights.push_back(float(parse_double(key, w)));
    } else {
      throw ValueError(path + ":" + std::to_string(line_no) +
                       ": unknown config key '" + key + "'");
    }
  }
  return cfg;
}

TrainResult train_model(const TrainConfig& cfg,
                        const std::vector<SampleRecord>& train_set,
                        const std::vector<SampleRecord>& dev_set) {
  cfg.validate();
  if (cfg.checkpoint_dir.empty())
    throw ValueError("train config: checkpoint_dir is required");
  if (train_set.empty()) throw ValueError("training set is empty");

  bool has_live = false;
  bool has_spoof = false;
  for (const SampleRecord& rec : train_set)
    (rec.label == Label::kLive ? has_live : has_spoof) = true;
  if (!has_live || !has_spoof)
    throw ValueError("training set must contain both live and spoof samples");

  check_modalities(train_set, cfg.model.modalities);
  if (!dev_set.empty()) check_modalities(dev_set, cfg.model.modalities);

  std::error_code ec;
  fs::create_directories(cfg.checkpoint_dir, ec);
  fs::path dir(cfg.checkpoint_dir);
  std::ofstream train_log(dir / "train_log.csv");
  std::ofstream epoch_log(dir / "epoch_log.csv");
  if (!train_log || !epoch_log)
    throw IoError("checkpoint dir is not writable: " + cfg.checkpoint_dir);
  train_log << "epoch,step,lr,mse,cdl,overall\n";
  epoch_log << "epoch,mean_mse,mean_cdl,mean_overall,dev_acer,dev_threshold\n";

  Model model(cfg.model, cfg.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = float(cfg.lr);
  adam_cfg.weight_decay = float(cfg.weight_decay);
  Adam adam(model.params(), adam_cfg);

  TrainResult result;
  double best_acer = std::numeric_limits<double>::infinity();
  int global_step = 0;

  const size_t n = train_set.size();
  std::vector<size_t> indices(n);
  for (size_t i = 0; i < n; ++i) indices[i] = i;
  const size_t num_batches = (n + size_t(cfg.batch_size) - 1) / size_t(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937 shuffle_rng = make_rng(cfg.seed, uint32_t(epoch), 0x9e3779b9u);
    shuffle_indices(indices, shuffle_rng);
    const double lr_t = lr_at_epoch(cfg.lr, epoch, cfg.lr_halve_every);

    BatchQueue queue(2);
    std::exception_ptr worker_error;
    std::thread worker([&] {
      try {
        for (size_t b = 0; b < num_batches && !queue.closed(); ++b) {
          size_t begin = b * size_t(cfg.batch_size);
          size_t end = std::min(n, begin + size_t(cfg.batch_size));
          queue.push(assemble_batch(train_set, indices, begin, end,
                                    cfg.model.modalities, cfg.augment,
                                    cfg.seed, uint32_t(epoch)));
        }
      } catch (...) {
        worker_error = std::current_exception();
      }
      queue.mark_done();
    });

    double sum_mse = 0.0;
    double sum_cdl = 0.0;
    double sum_overall = 0.0;
    size_t batches_seen = 0;
    try {
      Batch batch;
      while (queue.pop(batch)) {
        Tensor pred = model.forward(batch.inputs, /*training=*/true);
        LossReport loss = overall_loss(pred, batch.masks);
        if (!std::isfinite(double(loss.overall)))
          throw TrainError("non-finite loss at step " + std::to_string(global_step));
        loss.total.backward();
        adam.step(float(lr_t));
        adam.zero_grad();

        StepLog step;
        step.epoch = epoch;
        step.step = global_step;
        step.lr = lr_t;
        step.mse = loss.mse;
        step.cdl = loss.cdl;
        step.overall = loss.overall;
        result.steps.push_back(step);
        char row[192];
        std::snprintf(row, sizeof(row), "%d,%d,%.9g,%.9g,%.9g,%.9g\n", epoch,
                      global_step, lr_t, double(loss.mse), double(loss.cdl),
                      double(loss.overall));
        train_log << row << std::flush;

        sum_mse += loss.mse;
        sum_cdl += loss.cdl;
        sum_overall += loss.overall;
        ++batches_seen;
        ++global_step;
      }
    } catch (...) {
      queue.close();
      worker.join();
      throw;
    }
    worker.join();
    if (worker_error) std::rethrow_exception(worker_error);

    EpochLog elog;
    elog.epoch = epoch;
    elog.mean_mse = float(sum_mse / double(batches_seen));
    elog.mean_cdl = float(sum_cdl / double(batches_seen));
    elog.mean_overall = float(sum_overall / double(batches_seen));

    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
    std::string epoch_path = (dir / name).string();
    save_checkpoint(epoch_path, model);
    result.last_checkpoint = epoch_path;

    std::string dev_field = ",";
    if (!dev_set.empty()) {
      EvalOutcome dev = evaluate_model(model, dev_set, cfg.threshold, cfg.batch_size);
      elog.has_dev = true;
      elog.dev_acer = dev.report.overall.mean;
      elog.dev_threshold = dev.threshold;
      if (elog.dev_acer < best_acer) {
        best_acer = elog.dev_acer;
        save_checkpoint((dir / "best.ckpt").string(), model);
      }
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g", elog.dev_acer, elog.dev_threshold);
      dev_field = buf;
    }
    char row[192];
    std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,", elog.epoch,
                  double(elog.mean_mse), double(elog.mean_cdl),
                  double(elog.mean_overall));
    epoch_log << row << dev_field << "\n" << std::flush;
    result.epochs.push_back(elog);
  }

  if (dev_set.empty()) save_checkpoint((dir / "best.ckpt").string(), model);
  result.best_checkpoint = (dir / "best.ckpt").string();
  return result;
}

std::vector<ScoredSample> score_dataset(Model& model,
                                        const std::vector<SampleRecord>& records,
                                        int batch_size) {
  if (batch_size < 1) throw ValueError("score_dataset: batch_size must be >= 1");
  check_modalities(records, model.config().modalities);
  NoGradGuard guard;
  std::vector<ScoredSample> out;
  out.reserve(records.size());
  std::vector<size_t> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (size_t begin = 0; begin < records.size(); begin += size_t(batch_size)) {
    size_t end = std::min(records.size(), begin + size_t(batch_size));
    Batch batch = assemble_batch(records, order, begin, end,
                                 model.config().modalities,
                                 /*do_augment=*/false, 0, 0);
    Tensor masks = model.forward(batch.inputs, /*training=*/false);
    std::vector<float> scores = predict_scores(masks);
    for (size_t k = 0; k < scores.size(); ++k) {
      const SampleRecord& rec = records[begin + k];
      ScoredSample s;
      s.sample_id = rec.id;
      s.sub_protocol = rec.sub_protocol;
      s.label = rec.label;
      s.score = double(scores[k]);
      out.push_back(std::move(s));
    }
  }
  return out;
}

EvalOutcome evaluate_model(Model& model,
                           const std::vector<SampleRecord>& records,
                           const ThresholdPolicy& policy, int batch_size) {
  EvalOutcome outcome;
  outcome.scores = score_dataset(model, records, batch_size);
  outcome.threshold = select_threshold(outcome.scores, policy);
  outcome.report = build_report(outcome.scores, outcome.threshold);
  return outcome;
}

}  // namespace cdcn
