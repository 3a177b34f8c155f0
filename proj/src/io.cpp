#include "lmp/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "lmp/errors.hpp"

namespace lmp::io {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view text, double& out) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Typed lookup with key-named errors.
template <typename T>
T field(const Json& j, const char* key, const char* expected) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw InvalidParameter(std::string("key '") + key + "': expected " + expected);
  }
}

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidParameter(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InvalidParameter("unknown key '" + key + "' in " + where);
  }
}

std::pair<std::size_t, std::size_t> size_pair(const Json& j, const char* key) {
  const auto v = field<std::vector<std::size_t>>(j, key, "[height, width]");
  if (v.size() != 2) throw InvalidParameter(std::string("key '") + key + "': expected [height, width]");
  return {v[0], v[1]};
}

double p_from_json(const Json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_p(v.get<std::string>());
  throw InvalidParameter("key 'p': expected a number or \"inf\"");
}

PoolingSize m_from_json(const Json& v) {
  if (v.is_number()) return PoolingSize::absolute(v.get<double>());
  if (v.is_string()) return parse_m(v.get<std::string>());
  throw InvalidParameter("key 'm': expected a number or a percentage string");
}

Json m_to_json(const PoolingSize& m) {
  if (m.is_fraction()) return format_m(m);
  return m.value();
}

Json p_to_json(double p) {
  if (p == kInfinity) return "inf";
  return p;
}

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int k = 0; k < 8; ++k) b[static_cast<std::size_t>(k)] = static_cast<char>((v >> (8 * k)) & 0xffu);
  os.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b{};
  is.read(reinterpret_cast<char*>(b.data()), 8);
  if (!is) throw InvalidInput("truncated model file");
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | b[static_cast<std::size_t>(k)];
  return v;
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

constexpr char kModelMagic[] = "LMPMODEL";

}  // namespace

double parse_p(std::string_view text) {
  const auto t = trim(text);
  const auto low = lower(t);
  if (low == "inf" || low == "infinity") return kInfinity;
  double p = 0.0;
  if (!parse_double(t, p)) throw InvalidParameter("p must be a real >= 1 or \"inf\", got '" + std::string(t) + "'");
  if (!(p >= 1.0)) throw InvalidParameter("p must be >= 1, got " + std::string(t));
  return p;
}

PoolingSize parse_m(std::string_view text) {
  auto t = trim(text);
  if (const auto slash = t.find('/'); slash != std::string_view::npos) {
    double num = 0.0;
    double den = 0.0;
    if (!parse_double(t.substr(0, slash), num) || !parse_double(t.substr(slash + 1), den) || !(den > 0.0)) {
      throw InvalidParameter("m ratio must look like '1/3', got '" + std::string(text) + "'");
    }
    return PoolingSize::fraction(num / den);
  }
  const bool percent = !t.empty() && t.back() == '%';
  if (percent) t.remove_suffix(1);
  double v = 0.0;
  if (!parse_double(t, v)) throw InvalidParameter("m must be a number or a percentage, got '" + std::string(text) + "'");
  return percent ? PoolingSize::fraction(v / 100.0) : PoolingSize::absolute(v);
}

std::string format_m(const PoolingSize& m) {
  if (m.is_fraction()) return format_exact(m.value() * 100.0) + "%";
  return format_exact(m.value());
}

std::string format_p(double p) { return p == kInfinity ? "inf" : format_exact(p); }

std::vector<double> parse_losses(std::string_view text) {
  std::vector<double> losses;
  const auto body = trim(text);
  if (!body.empty() && body.front() == '[') {
    Json j;
    try {
      j = Json::parse(body);
    } catch (const Json::parse_error& e) {
      throw InvalidInput(std::string("malformed JSON losses: ") + e.what());
    }
    for (const auto& v : j) {
      if (!v.is_number()) throw InvalidInput("JSON losses must be an array of numbers");
      losses.push_back(v.get<double>());
    }
  } else {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool seen_row = false;
    while (pos <= body.size()) {
      const auto end = std::min(body.find('\n', pos), body.size());
      const auto line = trim(body.substr(pos, end - pos));
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      const auto cell = trim(line.substr(0, line.find(',')));
      double v = 0.0;
      if (parse_double(cell, v)) {
        losses.push_back(v);
      } else if (!seen_row && losses.empty()) {
        // header
      } else {
        throw InvalidInput("line " + std::to_string(line_no) + ": '" + std::string(cell) +
                           "' is not a number");
      }
      seen_row = true;
      if (end == body.size()) break;
    }
  }
  validate_losses(losses);
  return losses;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidParameter("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<double> read_losses_file(const std::filesystem::path& path) {
  return parse_losses(read_text(path));
}

std::string format_exact(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

std::string format_human(double v, int digits) {
  std::array<char, 64> buf{};
  std::snprintf(buf.data(), buf.size(), "%#.*g", digits, v);
  std::string s = buf.data();
  if (!s.empty() && s.back() == '.') s.pop_back();
  return s;
}

Json outcome_to_json(const SolveOutcome& outcome) {
  return Json{{"pooled_loss", outcome.pooled_loss},
              {"alpha_star", outcome.alpha_star},
              {"support_indices", outcome.support},
              {"weights", outcome.weights},
              {"dual", outcome.dual},
              {"params",
               {{"n", outcome.params.n},
                {"p", p_to_json(outcome.params.p)},
                {"q", outcome.params.q == kInfinity ? Json("inf") : Json(outcome.params.q)},
                {"m", outcome.params.m},
                {"gamma", outcome.params.gamma},
                {"tau", outcome.params.tau}}}};
}

Json spec_to_json(const SyntheticDatasetSpec& spec) {
  return Json{{"classes", spec.classes},
              {"image_size", {spec.height, spec.width}},
              {"images", spec.images},
              {"class_pixel_fractions", spec.class_pixel_fractions},
              {"feature_noise", spec.feature_noise},
              {"class_separation", spec.class_separation},
              {"shape_kind", spec.shape == ShapeKind::kBlobs ? "blobs" : "stripes"},
              {"seed", spec.seed}};
}

SyntheticDatasetSpec spec_from_json(const Json& j) {
  reject_unknown(j, {"classes", "image_size", "images", "class_pixel_fractions", "feature_noise",
                     "class_separation", "shape_kind", "seed"},
                 "dataset spec");
  SyntheticDatasetSpec spec;
  if (j.contains("classes")) spec.classes = field<int>(j, "classes", "an integer");
  if (j.contains("image_size")) std::tie(spec.height, spec.width) = size_pair(j, "image_size");
  if (j.contains("images")) spec.images = field<std::size_t>(j, "images", "a non-negative integer");
  if (j.contains("class_pixel_fractions")) {
    spec.class_pixel_fractions =
        field<std::vector<double>>(j, "class_pixel_fractions", "an array of numbers");
  }
  if (j.contains("feature_noise")) spec.feature_noise = field<double>(j, "feature_noise", "a number");
  if (j.contains("class_separation")) {
    spec.class_separation = field<double>(j, "class_separation", "a number");
  }
  if (j.contains("shape_kind")) {
    const auto kind = field<std::string>(j, "shape_kind", "\"blobs\" or \"stripes\"");
    if (kind == "blobs") {
      spec.shape = ShapeKind::kBlobs;
    } else if (kind == "stripes") {
      spec.shape = ShapeKind::kStripes;
    } else {
      throw InvalidParameter("key 'shape_kind': expected \"blobs\" or \"stripes\"");
    }
  }
  if (j.contains("seed")) spec.seed = field<std::uint64_t>(j, "seed", "a non-negative integer");
  return spec;
}

Json config_to_json(const TrainConfig& config) {
  Json sampler = nullptr;
  if (config.sampler) {
    sampler = {{"blend", config.sampler->blend},
               {"epsilon", config.sampler->epsilon},
               {"seed", config.sampler->seed}};
  }
  return Json{{"loss_mode", to_string(config.loss_mode)},
              {"p", p_to_json(config.pooling.p)},
              {"m", m_to_json(config.pooling.m)},
              {"lr0", config.lr0},
              {"momentum", config.momentum},
              {"poly_power", config.poly_power},
              {"iterations", config.iterations},
              {"batch_crops", config.batch_crops},
              {"crop_size", {config.crop_height, config.crop_width}},
              {"sampler", sampler},
              {"stats_decay", config.stats_decay},
              {"weight_decay", config.weight_decay},
              {"eval_every", config.eval_every},
              {"seed", config.seed}};
}

TrainConfig config_from_json(const Json& j, TrainConfig base) {
  reject_unknown(j, {"loss_mode", "p", "m", "lr0", "momentum", "poly_power", "iterations",
                     "batch_crops", "crop_size", "sampler", "stats_decay", "weight_decay",
                     "eval_every", "seed"},
                 "train config");
  TrainConfig c = std::move(base);
  if (j.contains("loss_mode")) c.loss_mode = parse_loss_mode(field<std::string>(j, "loss_mode", "a string"));
  if (j.contains("p")) c.pooling.p = p_from_json(j.at("p"));
  if (j.contains("m")) c.pooling.m = m_from_json(j.at("m"));
  if (j.contains("lr0")) c.lr0 = field<double>(j, "lr0", "a number");
  if (j.contains("momentum")) c.momentum = field<double>(j, "momentum", "a number");
  if (j.contains("poly_power")) c.poly_power = field<double>(j, "poly_power", "a number");
  if (j.contains("iterations")) c.iterations = field<int>(j, "iterations", "an integer");
  if (j.contains("batch_crops")) c.batch_crops = field<int>(j, "batch_crops", "an integer");
  if (j.contains("crop_size")) std::tie(c.crop_height, c.crop_width) = size_pair(j, "crop_size");
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    if (s.is_null()) {
      c.sampler.reset();
    } else {
      reject_unknown(s, {"blend", "epsilon", "seed"}, "sampler");
      SamplerConfig sc;
      if (s.contains("blend")) sc.blend = field<double>(s, "blend", "a number");
      if (s.contains("epsilon")) sc.epsilon = field<double>(s, "epsilon", "a number");
      if (s.contains("seed")) sc.seed = field<std::uint64_t>(s, "seed", "a non-negative integer");
      c.sampler = sc;
    }
  }
  if (j.contains("stats_decay")) c.stats_decay = field<double>(j, "stats_decay", "a number");
  if (j.contains("weight_decay")) c.weight_decay = field<double>(j, "weight_decay", "a number");
  if (j.contains("eval_every")) c.eval_every = field<int>(j, "eval_every", "an integer");
  if (j.contains("seed")) c.seed = field<std::uint64_t>(j, "seed", "a non-negative integer");
  return c;
}

Json stats_to_json(const ClassStats& stats) {
  return Json{{"classes", stats.classes},
              {"decay", stats.decay},
              {"iou", stats.iou},
              {"present", stats.present},
              {"confusion", stats.confusion}};
}

Json report_to_json(const TrainReport& report) {
  Json checkpoints = Json::array();
  for (const auto& cp : report.checkpoints) {
    checkpoints.push_back(
        {{"iteration", cp.iteration}, {"mean_iou", cp.mean_iou}, {"per_class_iou", cp.per_class_iou}});
  }
  return Json{{"per_class_iou", report.per_class_iou},
              {"mean_iou", report.mean_iou},
              {"loss_history", report.loss_history},
              {"checkpoints", checkpoints},
              {"train_iou_history", report.train_iou_history},
              {"upper_bound_violations", report.upper_bound_violations},
              {"config", config_to_json(report.config)},
              {"wall_time_seconds", report.wall_time_seconds}};
}

Json dataset_to_json(const Dataset& dataset) {
  Json images = Json::array();
  for (const auto& img : dataset.images) {
    std::vector<double> flat(img.features.data(), img.features.data() + img.features.size());
    images.push_back({{"labels", img.labels}, {"features", flat}});
  }
  return Json{{"spec", spec_to_json(dataset.spec)},
              {"feature_dim", dataset.feature_dim},
              {"images", images},
              {"train", dataset.train},
              {"eval", dataset.eval}};
}

Dataset dataset_from_json(const Json& j) {
  reject_unknown(j, {"spec", "feature_dim", "images", "train", "eval"}, "dataset");
  Dataset ds;
  ds.spec = spec_from_json(j.at("spec"));
  ds.feature_dim = field<std::size_t>(j, "feature_dim", "an integer");
  const std::size_t P = ds.spec.height * ds.spec.width;
  for (const auto& im : j.at("images")) {
    SegImage img;
    img.labels = field<std::vector<int>>(im, "labels", "an array of integers");
    const auto flat = field<std::vector<double>>(im, "features", "an array of numbers");
    if (img.labels.size() != P || flat.size() != P * ds.feature_dim) {
      throw InvalidInput("dataset image has inconsistent label/feature sizes");
    }
    img.features = Eigen::Map<const RowMatrix>(flat.data(), static_cast<Eigen::Index>(P),
                                               static_cast<Eigen::Index>(ds.feature_dim));
    ds.images.push_back(std::move(img));
  }
  ds.train = field<std::vector<std::size_t>>(j, "train", "an array of image ids");
  ds.eval = field<std::vector<std::size_t>>(j, "eval", "an array of image ids");
  return ds;
}

std::uint64_t config_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void write_model(const std::filesystem::path& path, const LinearModel& model,
                 const TrainConfig& config) {
  const auto cfg = config_to_json(config);
  std::ostringstream hash;
  hash << std::hex << config_hash(cfg);
  const Json header{{"format", "lmp-linear-model"},
                    {"version", 1},
                    {"shape", {{"classes", model.weights.rows()}, {"feature_dim", model.weights.cols()}}},
                    {"layout", "weights row-major (classes x feature_dim), then bias (classes)"},
                    {"seed", config.seed},
                    {"config_hash", hash.str()}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidParameter("cannot write '" + path.string() + "'");
  out.write(kModelMagic, 8);
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (Eigen::Index k = 0; k < model.weights.size(); ++k) put_f64(out, model.weights.data()[k]);
  for (Eigen::Index k = 0; k < model.bias.size(); ++k) put_f64(out, model.bias[k]);
}

LinearModel read_model(const std::filesystem::path& path, Json* header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), 8);
  if (!in || std::memcmp(magic.data(), kModelMagic, 8) != 0) throw InvalidInput("not an lmp model file");
  const auto len = get_u64(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InvalidInput("truncated model header");
  Json h;
  try {
    h = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(std::string("malformed model header: ") + e.what());
  }
  const auto classes = h.at("shape").at("classes").get<Eigen::Index>();
  const auto dim = h.at("shape").at("feature_dim").get<Eigen::Index>();
  LinearModel model;
  model.weights.resize(classes, dim);
  model.bias.resize(classes);
  for (Eigen::Index k = 0; k < model.weights.size(); ++k) model.weights.data()[k] = get_f64(in);
  for (Eigen::Index k = 0; k < model.bias.size(); ++k) model.bias[k] = get_f64(in);
  if (header) *header = std::move(h);
  return model;
}

}  // namespace lmp::io
