#include "ascm/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ascm/evaluation.hpp"
#include "ascm/flow.hpp"
#include "ascm/io.hpp"
#include "ascm/rng.hpp"
#include "ascm/synth.hpp"

namespace ascm {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kTrainPairStream = 1'000'000;
constexpr std::uint64_t kValPairStream = 2'000'000;

Tensor<float> load_image(const std::string& path, int in_channels) {
  const Image8 img = read_pnm(path);
  if (in_channels == 3 && img.channels != 3) throw FormatError("'" + path + "' is not a color image");
  if (in_channels != 1 && in_channels != 3) throw ConfigError("config: image input needs in_channels 1 or 3");
  return image_to_tensor(img, in_channels == 1);
}

ModelParams<float> load_model(const RunConfig& config) {
  return load_checkpoint(config.require("checkpoint")).model;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << std::setprecision(9);
  return out;
}

std::vector<CorrespondencePair> read_pair_list(const std::string& list, int in_channels) {
  const auto bytes = read_file(list);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  const fs::path base = fs::path(list).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
  std::vector<CorrespondencePair> pairs;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string src, tgt, flo, extra;
    if (!(fields >> src)) continue;
    if (!(fields >> tgt >> flo) || (fields >> extra)) {
      throw FormatError(list + ":" + std::to_string(number) + ": expected 'source target flow'");
    }
    CorrespondencePair p{load_image(resolve(src), in_channels), load_image(resolve(tgt), in_channels),
                         read_flo(resolve(flo))};
    if (p.flow.height != p.source.height() || p.flow.width != p.source.width() ||
        !p.source.same_shape(p.target)) {
      throw FormatError(list + ":" + std::to_string(number) + ": image and flow sizes differ");
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw FormatError(list + ": no pairs listed");
  return pairs;
}

void write_loss_row(std::ostream& os, const TrainLogRow& r) {
  os << r.iteration << ',' << r.lr << ',' << r.loss << ',';
  if (r.val_top1) os << *r.val_top1;
  os << '\n';
}

}  // namespace

std::vector<CorrespondencePair> load_training_pairs(const RunConfig& config, bool validation) {
  const std::string list = config.get(validation ? "val_list" : "data_list");
  const int in_channels = config.get_int("in_channels");
  if (!list.empty()) return read_pair_list(list, in_channels);
  if (in_channels != 1) throw ConfigError("config: synthetic pairs are grayscale; set in_channels = 1");
  const SynthConfig synth = config.synth_config();
  const int count = config.get_int(validation ? "val_pairs" : "train_pairs");
  if (count < 0) throw ConfigError("config: pair counts must be non-negative");
  const std::uint64_t seed = config.get_u64("seed");
  std::vector<CorrespondencePair> pairs;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t stream = (validation ? kValPairStream : kTrainPairStream) + static_cast<std::uint64_t>(i);
    pairs.push_back(to_correspondence(synth_pair(synth, mix_seed(seed, stream))));
  }
  return pairs;
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  const TrainConfig tc = config.train_config();
  const fs::path out = config.require("out");
  fs::create_directories(out);

  ModelParams<float> model;
  OptimState state;
  if (config.is_set("checkpoint")) {
    Checkpoint ck = load_checkpoint(config.get("checkpoint"), &tc.model);
    model = std::move(ck.model);
    if (ck.optim) state = std::move(*ck.optim);
  } else {
    model = ModelParams<float>::init(tc.model, mix_seed(tc.seed, kInitStream));
  }
  const auto train = load_training_pairs(config, false);
  const auto val = load_training_pairs(config, true);

  std::ofstream csv = open_output((out / "loss.csv").string());
  csv << "iteration,lr,loss,val_top1\n";
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogRow& r) {
    write_loss_row(csv, r);
    log << "iter " << r.iteration << " loss " << r.loss;
    if (r.val_top1) log << " val_top1 " << *r.val_top1;
    log << '\n';
  };
  hooks.on_checkpoint = [&](long it, const ModelParams<float>& m, const OptimState& s) {
    std::ostringstream name;
    name << "checkpoint_" << std::setw(7) << std::setfill('0') << it << ".ascm";
    save_checkpoint((out / name.str()).string(), m, &s);
  };
  train_loop(model, state, tc, train, val, hooks);
  save_checkpoint((out / "model.ascm").string(), model, &state);
  log << "wrote " << (out / "model.ascm").string() << '\n';
}

void cmd_flow(const RunConfig& config, std::ostream& log) {
  const ModelParams<float> model = load_model(config);
  const Tensor<float> src = load_image(config.require("source"), model.config.in_channels);
  const Tensor<float> tgt = load_image(config.require("target"), model.config.in_channels);
  if (!src.same_shape(tgt)) throw FormatError("source and target images differ in size");
  const std::string out = config.require("out");
  const double threshold = config.get_double("threshold");
  if (!(threshold >= 0)) throw ConfigError("config: key 'threshold' must be non-negative");

  const FlowEstimate est =
      estimate_flow(autoscale_features(src, model), autoscale_features(tgt, model), config.window(), threshold);
  write_flo(out, est.filled);
  fs::path filtered(out);
  filtered.replace_filename(filtered.stem().string() + "_filtered" + filtered.extension().string());
  write_flo(filtered.string(), est.filtered);
  log << "wrote " << out << " and " << filtered.string() << " (" << est.filtered.valid_count() << " of "
      << est.filtered.size() << " pixels consistent)\n";
}

void cmd_eval_flow(const RunConfig& config, std::ostream& out) {
  const FlowField pred = read_flo(config.require("pred"));
  const FlowField gt = read_flo(config.require("gt"));
  if (pred.height != gt.height || pred.width != gt.width) throw FormatError("flow fields differ in size");
  std::vector<std::uint8_t> mask(gt.size(), 0);
  if (config.is_set("mask")) {
    const Image8 m = read_pnm(config.get("mask"));
    if (m.height != gt.height || m.width != gt.width || m.channels != 1) {
      throw FormatError("mask must be a single-channel image of the flow size");
    }
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = gt.valid[i] && m.pixels[i] != 0;
  } else {
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = gt.valid[i] && pred.valid[i];
  }
  const std::size_t n_all = gt.valid_count();
  const std::size_t n_masked = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  if (n_all == 0) throw FormatError("ground truth has no valid pixels");
  out << std::setprecision(9);
  write_epe_csv(out, epe(pred, gt), n_all, n_masked ? epe(pred, gt, mask) : 0.0, n_masked);
}

namespace {

std::vector<std::vector<double>> read_csv_rows(const std::string& path, std::size_t columns) {
  const auto bytes = read_file(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::vector<std::vector<double>> rows;
  int number = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.find_first_of("abcdefghijklmnopqrstuvwxyz") != std::string::npos) continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(number) + ": non-numeric cell '" + cell + "'");
      }
    }
    if (row.size() != columns) {
      throw FormatError(path + ":" + std::to_string(number) + ": expected " + std::to_string(columns) + " columns");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void cmd_eval_pck(const RunConfig& config, std::ostream& out) {
  // keypoints: src_x,src_y,gt_x,gt_y,visible,src_w,src_h,tgt_w,tgt_h; predictions: pred_x,pred_y
  const auto kp = read_csv_rows(config.require("keypoints"), 9);
  const auto pred = read_csv_rows(config.require("pred"), 2);
  if (kp.size() != pred.size()) throw FormatError("keypoint and prediction files differ in row count");
  std::vector<KeypointPair> pairs;
  for (std::size_t i = 0; i < kp.size(); ++i) {
    const auto& k = kp[i];
    KeypointPair p;
    p.source = {k[0], k[1]};
    p.ground_truth = {k[2], k[3]};
    p.predicted = {pred[i][0], pred[i][1]};
    p.visible = k[4] != 0;
    p.reference_length = pck_length(k[5], k[6], k[7], k[8]);
    pairs.push_back(p);
  }
  const std::vector<double> alphas = config.is_set("alphas") ? config.get_doubles("alphas") : default_pck_alphas();
  out << std::setprecision(9);
  write_pck_csv(out, pck_curve(pairs, alphas));
}

void cmd_attention(const RunConfig& config, std::ostream& log) {
  const ModelParams<float> model = load_model(config);
  const Tensor<float> img = load_image(config.require("source"), model.config.in_channels);
  Tensor<float> att;
  if (model.config.num_scales() == 1) {
    att = Tensor<float>({1, img.height(), img.width()}, 1.0f);
  } else {
    att = attention_forward(img, model);
  }
  for (const auto& p : export_attention(att, config.require("out"))) log << "wrote " << p << '\n';
}

void cmd_synth(const RunConfig& config, std::ostream& log) {
  const SyntheticPair pair = synth_pair(config.synth_config(), config.get_u64("seed"));
  const fs::path out = config.require("out");
  fs::create_directories(out);
  write_pnm((out / "source.pgm").string(), pair.source);
  write_pnm((out / "target.pgm").string(), pair.target);
  write_flo((out / "flow.flo").string(), pair.flow);
  log << "wrote " << (out / "source.pgm").string() << ", target.pgm, flow.flo (" << pair.flow.valid_count()
      << " valid pixels)\n";
}

void cmd_match(const RunConfig& config, std::ostream& out) {
  const ModelParams<float> model = load_model(config);
  const Tensor<float> src = load_image(config.require("source"), model.config.in_channels);
  const Tensor<float> tgt = load_image(config.require("target"), model.config.in_channels);
  const auto px = config.get_ints("pixel");
  if (px.size() != 2) throw ConfigError("config: key 'pixel': expected 'row,col'");
  const Pixel source{px[0], px[1]};
  const CandidateSet cands = candidate_window(source, config.window(), tgt.height(), tgt.width());

  const Tensor<float> fs_ = autoscale_features(src, model);
  const Tensor<float> ft = autoscale_features(tgt, model);
  const int D = fs_.channels();
  Tensor<float> q({static_cast<int>(cands.targets.size()), D});
  for (std::size_t j = 0; j < cands.targets.size(); ++j) {
    const auto f = feature_at(ft, cands.targets[j]);
    std::copy(f.begin(), f.end(), q.data() + j * D);
  }
  const auto p = feature_at(fs_, source);
  const auto scores = score_candidates<float>(p, q);
  out << std::setprecision(9) << "index,row,col,score\n";
  for (std::size_t j = 0; j < scores.size(); ++j) {
    out << j << ',' << cands.targets[j].row << ',' << cands.targets[j].col << ',' << scores[j] << '\n';
  }
  const auto best = best_match<float>(scores, cands);
  out << "best," << best.position.row << ',' << best.position.col << ',' << best.score << '\n';
}

}  // namespace ascm
