#include "lrr/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lrr/rng.hpp"

namespace lrr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  return out;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (" + what + ")");
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) bad_value(key, v, "expected a finite number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "expected a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "expected true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const auto& xs, const char* sep) {
  std::string s;
  for (const auto& x : xs) {
    if (!s.empty()) s += sep;
    s += std::to_string(x);
  }
  return s;
}

StageSpec parse_stage(const std::string& key, const std::string& value) {
  const auto w = words(value);
  if (w.size() < 3 || w.size() > 4) bad_value(key, value, "expected '<branches> <iterations> <lr> [de]'");
  StageSpec st;
  st.branches.clear();
  for (const auto& b : split(w[0], ',')) st.branches.push_back(parse_uint(key, b));
  st.iterations = parse_uint(key, w[1]);
  st.lr = parse_double(key, w[2]);
  if (w.size() == 4) {
    if (w[3] != "de") bad_value(key, value, "trailing flag must be 'de'");
    st.de = true;
  }
  return st;
}

std::string stage_text(const StageSpec& st) {
  return join(st.branches, ",") + " " + std::to_string(st.iterations) + " " + fmt_double(st.lr) +
         (st.de ? " de" : "");
}

template <std::size_t N>
std::array<std::size_t, N> parse_uint_list(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != N) bad_value(key, v, "wrong number of entries");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_uint(key, parts[i]);
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

// ---- configuration -------------------------------------------------------------

void TrainConfig::validate() const {
  if (classes < 2 || classes > 254) throw ConfigError("classes must be in [2, 254]");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (stages.empty()) throw ConfigError("at least one stage is required");
  const std::vector<std::size_t> all{32, 16, 8, 4};
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    if (st.branches.empty() || st.branches.size() > 4 ||
        !std::equal(st.branches.begin(), st.branches.end(), all.begin()))
      throw ConfigError("stage." + std::to_string(i + 1) +
                        ": active branches must be a coarse-to-fine prefix of 32,16,8,4");
    if (!(st.lr >= 0)) throw ConfigError("stage." + std::to_string(i + 1) + ": lr must be >= 0");
  }
  if (stages.front().branches.size() != 1)
    throw ConfigError("stage.1 must activate only the 32x branch");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (de_radius < 0) throw ConfigError("de_radius must be >= 0");
  if (precision != "f32" && precision != "f64") throw ConfigError("precision must be f32 or f64");
  if (pca_min_coverage < 0 || pca_min_coverage > 1) throw ConfigError("pca_min_coverage must be in [0, 1]");
  if (augment) {
    try {
      aug.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    model_config().pyramid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("widths must be positive");
  if (convs_per_stage == 0) throw ConfigError("convs_per_stage must be >= 1");
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.backbone.widths = widths;
  m.backbone.convs_per_stage = convs_per_stage;
  m.backbone.seed = seed;
  m.pyramid.strides = {32, 16, 8, 4};
  m.pyramid.recon_stride = 4;
  m.pyramid.mask_pool = mask_pool;
  m.pyramid.tau = tau;
  m.pyramid.K = basis_count;
  m.pyramid.C = classes;
  m.pyramid.masking = masking;
  m.de_factor = 8;
  return m;
}

std::string TrainConfig::canonical() const {
  std::ostringstream os;
  os << "classes = " << classes << "\n"
     << "seed = " << seed << "\n";
  for (std::size_t i = 0; i < stages.size(); ++i) os << "stage." << i + 1 << " = " << stage_text(stages[i]) << "\n";
  os << "batch = " << batch << "\n"
     << "momentum = " << fmt_double(momentum) << "\n"
     << "weight_decay = " << fmt_double(weight_decay) << "\n"
     << "augment = " << (augment ? "true" : "false") << "\n"
     << "aug_min = " << aug.min_size << "\n"
     << "aug_max = " << aug.max_size << "\n"
     << "aug_crop = " << aug.crop << "\n"
     << "de_radius = " << de_radius << "\n"
     << "de_weight = " << fmt_double(de_weight) << "\n"
     << "branch_weights = " << fmt_double(branch_weights[0]) << "," << fmt_double(branch_weights[1]) << ","
     << fmt_double(branch_weights[2]) << "," << fmt_double(branch_weights[3]) << "\n"
     << "supervise = " << (supervise_raw ? "raw" : "fused") << "\n"
     << "masking = " << (masking ? "true" : "false") << "\n"
     << "tau = " << fmt_double(tau) << "\n"
     << "mask_pool = " << mask_pool << "\n"
     << "basis_count = " << basis_count << "\n"
     << "pca_patches = " << pca_patches << "\n"
     << "pca_min_coverage = " << fmt_double(pca_min_coverage) << "\n"
     << "learn_bases = " << (learn_bases ? "true" : "false") << "\n"
     << "widths = " << join(widths, ",") << "\n"
     << "convs_per_stage = " << convs_per_stage << "\n"
     << "deterministic = " << (deterministic ? "true" : "false") << "\n"
     << "precision = " << precision << "\n";
  return os.str();
}

std::uint64_t TrainConfig::digest() const { return fnv1a(canonical()); }

std::size_t TrainConfig::total_iterations() const {
  std::size_t n = 0;
  for (const auto& st : stages) n += st.iterations;
  return n;
}

TrainConfig parse_config(std::istream& is) {
  TrainConfig cfg;
  std::map<std::size_t, StageSpec> stages;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string v = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");

    if (key.rfind("stage.", 0) == 0) {
      const std::size_t idx = parse_uint(key, key.substr(6));
      if (idx == 0) throw ConfigError("stage numbering starts at 1");
      stages[idx] = parse_stage(key, v);
    } else if (key == "train_manifest") cfg.train_manifest = v;
    else if (key == "checkpoint") cfg.checkpoint = v;
    else if (key == "loss_csv") cfg.loss_csv = v;
    else if (key == "bases") cfg.bases = v;
    else if (key == "resume") cfg.resume = v;
    else if (key == "classes") cfg.classes = parse_uint(key, v);
    else if (key == "seed") cfg.seed = parse_uint(key, v);
    else if (key == "batch") cfg.batch = parse_uint(key, v);
    else if (key == "momentum") cfg.momentum = parse_double(key, v);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, v);
    else if (key == "augment") cfg.augment = parse_bool(key, v);
    else if (key == "aug_min") cfg.aug.min_size = parse_uint(key, v);
    else if (key == "aug_max") cfg.aug.max_size = parse_uint(key, v);
    else if (key == "aug_crop") cfg.aug.crop = parse_uint(key, v);
    else if (key == "de_radius") cfg.de_radius = static_cast<int>(parse_uint(key, v));
    else if (key == "de_weight") cfg.de_weight = parse_double(key, v);
    else if (key == "branch_weights") {
      const auto parts = split(v, ',');
      if (parts.size() != 4) bad_value(key, v, "expected four comma-separated weights");
      for (std::size_t i = 0; i < 4; ++i) cfg.branch_weights[i] = parse_double(key, parts[i]);
    } else if (key == "supervise") {
      if (v != "fused" && v != "raw") bad_value(key, v, "expected fused or raw");
      cfg.supervise_raw = v == "raw";
    } else if (key == "masking") cfg.masking = parse_bool(key, v);
    else if (key == "tau") cfg.tau = parse_double(key, v);
    else if (key == "mask_pool") cfg.mask_pool = parse_uint(key, v);
    else if (key == "basis_count") cfg.basis_count = parse_uint(key, v);
    else if (key == "pca_patches") cfg.pca_patches = parse_uint(key, v);
    else if (key == "pca_min_coverage") cfg.pca_min_coverage = parse_double(key, v);
    else if (key == "learn_bases") cfg.learn_bases = parse_bool(key, v);
    else if (key == "widths") cfg.widths = parse_uint_list<4>(key, v);
    else if (key == "convs_per_stage") cfg.convs_per_stage = parse_uint(key, v);
    else if (key == "deterministic") cfg.deterministic = parse_bool(key, v);
    else if (key == "precision") cfg.precision = v;
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_uint(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (!stages.empty()) {
    cfg.stages.clear();
    std::size_t expect = 1;
    for (auto& [idx, st] : stages) {
      if (idx != expect++) throw ConfigError("stage keys must be numbered 1..n without gaps");
      cfg.stages.push_back(std::move(st));
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig parse_config_text(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_config(is);
}

// ---- optimiser -------------------------------------------------------------------

template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr,
              double momentum, double weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape())
    throw ShapeError("sgd_step: parameter " + shape_str(param.shape()) + ", gradient " +
                     shape_str(grad.shape()) + " and velocity " + shape_str(velocity.shape()) +
                     " must agree");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(static_cast<double>(grad[i])))
      throw NumericError("sgd_step: non-finite gradient at element " + std::to_string(i));
  const T m = static_cast<T>(momentum), a = static_cast<T>(lr), wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] - a * (grad[i] + wd * param[i]);
    param[i] += velocity[i];
  }
}

// ---- PCA bases --------------------------------------------------------------------

std::vector<PcaBasis> extract_bases(std::span<const Sample> samples, std::size_t classes,
                                    std::size_t K, std::size_t count, std::size_t patch,
                                    double min_coverage, std::uint64_t seed) {
  std::vector<PcaBasis> out;
  for (std::size_t c = 0; c < classes; ++c) {
    const PatchSet set = extract_class_patches(samples, static_cast<std::uint8_t>(c), count, patch,
                                               min_coverage, seed);
    out.push_back(fit_basis_pca(set, K));
  }
  return out;
}

Checkpoint bases_to_checkpoint(const std::vector<PcaBasis>& bases) {
  Checkpoint ck;
  for (std::size_t c = 0; c < bases.size(); ++c) {
    const PcaBasis& b = bases[c];
    const std::string p = "basis/" + std::to_string(c) + "/";
    const std::size_t n = b.components.empty() ? 0 : b.components[0].dim(0);
    TensorF comps({b.components.size(), n, n});
    for (std::size_t k = 0; k < b.components.size(); ++k)
      for (std::size_t i = 0; i < n * n; ++i) comps[k * n * n + i] = static_cast<float>(b.components[k][i]);
    TensorF sv({b.singular_values.size()});
    for (std::size_t k = 0; k < b.singular_values.size(); ++k) sv[k] = static_cast<float>(b.singular_values[k]);
    ck.put(p + "components", std::move(comps));
    ck.put(p + "singular_values", std::move(sv));
    ck.put(p + "patches_used", encode_u64(b.patches_used));
  }
  return ck;
}

std::vector<PcaBasis> bases_from_checkpoint(const Checkpoint& ck) {
  std::vector<PcaBasis> out;
  for (std::size_t c = 0;; ++c) {
    const std::string p = "basis/" + std::to_string(c) + "/";
    const TensorF* comps = ck.find(p + "components");
    if (!comps) break;
    if (comps->ndim() != 3 || comps->dim(1) != comps->dim(2))
      throw FormatError("basis container: " + p + "components must be K x n x n");
    PcaBasis b;
    const std::size_t n = comps->dim(1);
    for (std::size_t k = 0; k < comps->dim(0); ++k) {
      TensorD comp({n, n});
      for (std::size_t i = 0; i < n * n; ++i) comp[i] = (*comps)[k * n * n + i];
      b.components.push_back(std::move(comp));
    }
    for (float v : ck.get(p + "singular_values").values()) b.singular_values.push_back(v);
    b.patches_used = decode_u64(ck.get(p + "patches_used"));
    out.push_back(std::move(b));
  }
  if (out.empty()) throw FormatError("basis container holds no bases");
  return out;
}

// ---- checkpoints -------------------------------------------------------------------

namespace {

TensorF model_meta(const ModelConfig& m) {
  std::vector<float> v;
  for (std::size_t w : m.backbone.widths) v.push_back(static_cast<float>(w));
  v.push_back(static_cast<float>(m.backbone.convs_per_stage));
  v.push_back(static_cast<float>(m.pyramid.recon_stride));
  v.push_back(static_cast<float>(m.pyramid.mask_pool));
  v.push_back(static_cast<float>(m.pyramid.tau));
  v.push_back(static_cast<float>(m.pyramid.K));
  v.push_back(static_cast<float>(m.pyramid.C));
  v.push_back(m.pyramid.masking ? 1.0f : 0.0f);
  v.push_back(static_cast<float>(m.de_factor));
  v.push_back(static_cast<float>(m.pyramid.strides.size()));
  for (std::size_t s : m.pyramid.strides) v.push_back(static_cast<float>(s));
  TensorF t({v.size()});
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

template <typename T>
TensorF to_float(const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, float>) return t;
  else return t.template cast<float>();
}

}  // namespace

template <typename T>
Checkpoint to_checkpoint(const ModelParams<T>& params, const ModelConfig& config,
                         const OptimState<T>* optim, std::uint64_t iteration, std::uint64_t digest) {
  Checkpoint ck;
  params.for_each([&](const std::string& name, const std::string&, const Tensor<T>& t) {
    ck.entries.emplace_back(name, to_float(t));
  });
  if (optim)
    for (const auto& [name, v] : optim->velocity) ck.entries.emplace_back("velocity/" + name, to_float(v));
  ck.entries.emplace_back("meta/iteration", encode_u64(iteration));
  ck.entries.emplace_back("meta/config_digest", encode_u64(digest));
  ck.entries.emplace_back("meta/model", model_meta(config));
  return ck;
}

ModelConfig model_config_from_checkpoint(const Checkpoint& ck) {
  const TensorF& t = ck.get("meta/model");
  if (t.ndim() != 1 || t.size() < 13) throw FormatError("checkpoint: malformed meta/model");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  ModelConfig m;
  for (std::size_t i = 0; i < 4; ++i) m.backbone.widths[i] = u(i);
  m.backbone.convs_per_stage = u(4);
  m.pyramid.recon_stride = u(5);
  m.pyramid.mask_pool = u(6);
  m.pyramid.tau = t[7];
  m.pyramid.K = u(8);
  m.pyramid.C = u(9);
  m.pyramid.masking = t[10] != 0.0f;
  m.de_factor = u(11);
  const std::size_t ns = u(12);
  if (t.size() != 13 + ns) throw FormatError("checkpoint: malformed meta/model");
  m.pyramid.strides.clear();
  for (std::size_t i = 0; i < ns; ++i) m.pyramid.strides.push_back(u(13 + i));
  m.pyramid.validate();
  return m;
}

template <typename T>
ModelParams<T> params_from_checkpoint(const Checkpoint& ck, const ModelConfig& config) {
  ModelConfig skeleton = config;
  ModelParams<T> p = init_model<T>(skeleton, {});
  p.for_each([&](const std::string& name, const std::string&, Tensor<T>& t) {
    const TensorF& src = ck.get(name);
    if (src.shape() != t.shape())
      throw FormatError("checkpoint entry '" + name + "' has shape " + shape_str(src.shape()) +
                        ", model expects " + shape_str(t.shape()));
    if constexpr (std::is_same_v<T, float>) t = src;
    else t = src.template cast<T>();
  });
  return p;
}

// ---- loss CSV -----------------------------------------------------------------------

std::string loss_csv_header() {
  return "iteration,stage,loss_32x,loss_16x,loss_8x,loss_4x,loss_dil,loss_ero,total";
}

std::string loss_csv_row(const IterationLog& log) {
  auto cell = [](bool on, double v) {
    if (!on) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  std::string row = std::to_string(log.iteration) + "," + std::to_string(log.stage);
  for (std::size_t l = 0; l < 4; ++l) row += "," + cell(l < log.active_levels, log.report.branch[l]);
  row += "," + cell(log.de, log.report.dilation);
  row += "," + cell(log.de, log.report.erosion);
  row += "," + cell(true, log.report.total);
  return row;
}

// ---- trainer ----------------------------------------------------------------------

template <typename T>
Trainer<T>::Trainer(TrainConfig config, std::vector<Sample> train, ModelParams<T> init)
    : config_(std::move(config)), model_(config_.model_config()), train_(std::move(train)),
      params_(std::move(init)) {
  config_.validate();
  if (train_.empty() && config_.total_iterations() > 0) throw std::invalid_argument("Trainer: empty training set");
  for (const Sample& s : train_) validate_labels(s.truth, config_.classes);
  params_.for_each([&](const std::string& name, const std::string&, const Tensor<T>& t) {
    optim_.velocity.emplace(name, Tensor<T>(t.shape()));
  });
}

template <typename T>
ModelParams<T> Trainer<T>::initial_params(const TrainConfig& config, std::span<const Sample> train) {
  std::vector<PcaBasis> bases;
  if (!config.bases.empty()) {
    bases = bases_from_checkpoint(load_checkpoint(config.bases));
    if (bases.size() != config.classes)
      throw ConfigError("basis container holds " + std::to_string(bases.size()) + " classes, config says " +
                        std::to_string(config.classes));
  } else {
    bases = extract_bases(train, config.classes, config.basis_count, config.pca_patches, 32,
                          config.pca_min_coverage, config.seed);
  }
  return init_model<T>(config.model_config(), bases);
}

template <typename T>
std::size_t Trainer<T>::current_stage() const {
  std::uint64_t end = 0;
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    end += config_.stages[i].iterations;
    if (iteration_ < end) return i;
  }
  return config_.stages.size();
}

template <typename T>
void Trainer<T>::set_config(TrainConfig config) {
  config.validate();
  const ModelConfig m = config.model_config();
  if (m.backbone.widths != model_.backbone.widths || m.backbone.convs_per_stage != model_.backbone.convs_per_stage ||
      m.pyramid.K != model_.pyramid.K || m.pyramid.C != model_.pyramid.C)
    throw ConfigError("set_config: model structure must not change");
  config_ = std::move(config);
  model_ = m;
}

template <typename T>
IterationLog Trainer<T>::step() {
  const std::size_t si = current_stage();
  if (si >= config_.stages.size()) throw std::logic_error("Trainer::step: schedule finished");
  const StageSpec& st = config_.stages[si];
  const std::size_t active = st.branches.size();

  LossWeights weights;
  weights.branch = config_.branch_weights;
  weights.de = config_.de_weight;
  weights.supervise_raw = config_.supervise_raw;

  CounterRng rng(config_.seed, derive_stream(0x7E57ull, iteration_));
  const T scale = T(1) / static_cast<T>(config_.batch);
  std::optional<ModelParams<T>> grads;
  IterationLog log;
  log.iteration = iteration_ + 1;
  log.stage = si + 1;
  log.active_levels = active;
  log.de = st.de;

  AugmentSpec spec = config_.aug;
  spec.seed = config_.seed;
  const std::size_t batch_size = config_.augment ? augment_size(spec, rng()) : 0;

  for (std::size_t b = 0; b < config_.batch; ++b) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(train_.size()) - 1));
    const std::uint64_t draw = rng();
    Sample aug;
    const Sample* s = &train_[idx];
    if (config_.augment) {
      aug = augment_to_size(*s, batch_size, spec.crop, draw);
      s = &aug;
    }
    Tensor<T> image;
    if constexpr (std::is_same_v<T, float>) image = s->image;
    else image = s->image.template cast<T>();

    ForwardPass<T> pass = model_forward(params_, model_, image, active, st.de, true);
    DETargets targets;
    if (st.de) targets = build_de_targets(s->truth, config_.classes, config_.de_radius, model_.de_factor);
    AssembledLoss<T> loss = assemble_losses(pass.levels, s->truth, active, pass.de_logits,
                                            st.de ? &targets : nullptr, weights, scale);
    if (!std::isfinite(loss.report.total))
      throw NumericError("training diverged: non-finite loss at iteration " + std::to_string(log.iteration));
    ModelParams<T> g = model_backward(params_, model_, pass, loss, config_.learn_bases);
    if (!grads) {
      grads = std::move(g);
    } else {
      std::vector<Tensor<T>*> dst;
      grads->for_each([&](const std::string&, const std::string&, Tensor<T>& t) { dst.push_back(&t); });
      std::size_t i = 0;
      g.for_each([&](const std::string&, const std::string&, Tensor<T>& t) { *dst[i++] += t; });
    }
    for (std::size_t l = 0; l < 4; ++l) log.report.branch[l] += loss.report.branch[l] / config_.batch;
    log.report.dilation += loss.report.dilation / config_.batch;
    log.report.erosion += loss.report.erosion / config_.batch;
    log.report.total += loss.report.total / config_.batch;
  }

  auto active_group = [&](const std::string& group) {
    if (group == "backbone") return true;
    if (group == "de") return st.de;
    for (std::size_t s : st.branches)
      if (group == "branch" + std::to_string(s)) return true;
    return false;
  };
  auto updates = [&](const std::string& name, const std::string& group) {
    if (!active_group(group)) return false;
    if (!config_.learn_bases && name.size() >= 5 && name.compare(name.size() - 5, 5, ".bank") == 0) return false;
    return true;
  };

  // Every gradient is checked before any parameter moves, so a failure leaves
  // the model at its last good state.
  grads->for_each([&](const std::string& name, const std::string& group, const Tensor<T>& g) {
    if (!updates(name, group)) return;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(static_cast<double>(g[i])))
        throw NumericError("training diverged: non-finite gradient in " + name + " at iteration " +
                           std::to_string(log.iteration));
  });
  std::vector<const Tensor<T>*> gs;
  grads->for_each([&](const std::string&, const std::string&, const Tensor<T>& t) { gs.push_back(&t); });
  std::size_t i = 0;
  params_.for_each([&](const std::string& name, const std::string& group, Tensor<T>& p) {
    const Tensor<T>& g = *gs[i++];
    if (!updates(name, group)) return;
    sgd_step(p, g, optim_.velocity.at(name), st.lr, config_.momentum, config_.weight_decay);
  });
  ++iteration_;
  return log;
}

template <typename T>
void Trainer<T>::run(std::uint64_t until, const std::function<void(const IterationLog&)>& on_step) {
  until = std::min<std::uint64_t>(until, config_.total_iterations());
  while (iteration_ < until) {
    const IterationLog log = step();
    if (on_step) on_step(log);
  }
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
  return to_checkpoint(params_, model_, &optim_, iteration_, config_.digest());
}

template <typename T>
void Trainer<T>::restore(const Checkpoint& ck, bool check_digest) {
  if (check_digest && decode_u64(ck.get("meta/config_digest")) != config_.digest())
    throw ConfigError("checkpoint was written under a different training configuration");
  params_ = params_from_checkpoint<T>(ck, model_);
  for (auto& [name, v] : optim_.velocity) {
    const TensorF& src = ck.get("velocity/" + name);
    if (src.shape() != v.shape()) throw FormatError("checkpoint velocity '" + name + "' has the wrong shape");
    if constexpr (std::is_same_v<T, float>) v = src;
    else v = src.template cast<T>();
  }
  iteration_ = decode_u64(ck.get("meta/iteration"));
}

template class Trainer<float>;
template class Trainer<double>;

// ---- CLI training flow -------------------------------------------------------------

namespace {

template <typename T>
TrainResult train_impl(const TrainConfig& config) {
  if (config.train_manifest.empty()) throw ConfigError("train_manifest is required");
  std::vector<Sample> data = load_dataset(config.train_manifest);
  if (data.empty()) throw ConfigError("training manifest lists no samples");

  ModelParams<T> init = config.resume.empty() ? Trainer<T>::initial_params(config, data)
                                              : init_model<T>(config.model_config(), {});
  Trainer<T> trainer(config, std::move(data), std::move(init));
  if (!config.resume.empty()) trainer.restore(load_checkpoint(config.resume));

  std::ofstream csv;
  if (!config.loss_csv.empty()) {
    csv.open(config.loss_csv, config.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!csv) throw ConfigError("cannot open " + config.loss_csv + " for writing");
    if (config.resume.empty()) csv << loss_csv_header() << "\n";
  }

  std::vector<std::uint64_t> boundaries;
  std::uint64_t end = 0;
  for (const auto& st : config.stages) boundaries.push_back(end += st.iterations);

  TrainResult result;
  result.checkpoint = config.checkpoint;
  const std::uint64_t total = config.total_iterations();
  while (trainer.iteration() < total) {
    IterationLog log;
    try {
      log = trainer.step();
    } catch (const NumericError&) {
      save_checkpoint(config.checkpoint + ".last-good", trainer.checkpoint());
      throw;
    }
    result.log.push_back(log);
    if (csv.is_open()) csv << loss_csv_row(log) << "\n" << std::flush;
    const std::uint64_t it = trainer.iteration();
    if (auto b = std::find(boundaries.begin(), boundaries.end(), it); b != boundaries.end() && it < total)
      save_checkpoint(config.checkpoint + ".stage" + std::to_string(b - boundaries.begin() + 1), trainer.checkpoint());
    if (config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && it < total)
      save_checkpoint(config.checkpoint, trainer.checkpoint());
  }
  save_checkpoint(config.checkpoint, trainer.checkpoint());
  result.iterations = trainer.iteration();
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config) {
  config.validate();
  return config.precision == "f64" ? train_impl<double>(config) : train_impl<float>(config);
}

#define LRR_INSTANTIATE_TRAIN(T)                                                                     \
  template void sgd_step(Tensor<T>&, const Tensor<T>&, Tensor<T>&, double, double, double);          \
  template Checkpoint to_checkpoint(const ModelParams<T>&, const ModelConfig&, const OptimState<T>*, \
                                    std::uint64_t, std::uint64_t);                                   \
  template ModelParams<T> params_from_checkpoint<T>(const Checkpoint&, const ModelConfig&);

LRR_INSTANTIATE_TRAIN(float)
LRR_INSTANTIATE_TRAIN(double)

}  // namespace lrr
