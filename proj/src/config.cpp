#include "dfkan/config.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace dfkan {

namespace {

void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items()) {
    if (ok.count(k) == 0) throw ConfigError(where + "." + k + ": unknown field");
  }
}

template <typename T>
T field(const Json& j, const char* key, T fallback, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type (" + std::string(it->type_name()) + ")");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Rethrows enum-parsing errors with the field path attached.
template <typename F>
auto at_field(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

// ---- serialization --------------------------------------------------------

Json to_json(const BasisSpec& b) {
  Json j;
  j["family"] = to_string(b.family);
  j["domain"] = to_string(b.domain);
  switch (b.family) {
    case Family::BSpline:
      j["spline_order"] = b.spline_order;
      j["grid"] = b.grid;
      break;
    case Family::Rational:
      j["numerator_degree"] = b.numerator_degree;
      j["denominator_degree"] = b.denominator_degree;
      break;
    case Family::Gegenbauer:
      j["order"] = b.order;
      j["alpha"] = b.alpha;
      break;
    case Family::Jacobi:
      j["order"] = b.order;
      j["alpha"] = b.alpha;
      j["beta"] = b.beta;
      break;
    default:
      j["order"] = b.order;
  }
  return j;
}

Json to_json(const RegConfig& r) {
  return Json{{"placement", to_string(r.placement)},
              {"order", to_string(r.order)},
              {"dropout_p", r.dropout_p},
              {"use_dropout", r.use_dropout},
              {"use_bn", r.use_batchnorm}};
}

Json to_json(const LayerConfig& l) {
  Json j{{"n_in", l.n_in}, {"n_out", l.n_out}, {"input", l.input.tag()}, {"output", l.output.tag()},
         {"reg", to_json(l.reg)}, {"bias", l.has_bias}};
  if (l.input.learnable()) j["input_basis"] = to_json(l.input.basis);
  if (l.output.learnable()) j["output_basis"] = to_json(l.output.basis);
  return j;
}

Json to_json(const ModelConfig& m) {
  Json layers = Json::array();
  for (const auto& l : m.layers) layers.push_back(to_json(l));
  return Json{{"layers", layers}, {"attention", m.attention}, {"seed", m.seed}};
}

Json to_json(const TrainConfig& t) {
  return Json{{"optimizer", t.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"},
              {"lr", t.optimizer.lr},
              {"beta1", t.optimizer.beta1},
              {"beta2", t.optimizer.beta2},
              {"eps", t.optimizer.eps},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"weight_decay", t.weight_decay},
              {"attention_l1", t.attention_l1},
              {"patience", t.patience},
              {"clip_norm", t.clip_norm},
              {"normalize_inputs", t.normalize_inputs},
              {"normalize_target", t.normalize_target}};
}

Json to_json(const DataConfig& d) {
  Json j{{"split", {d.train_frac, d.val_frac, d.test_frac}}};
  if (!d.path.empty()) {
    j["path"] = d.path;
    j["target"] = d.target;
    j["delimiter"] = std::string(1, d.delimiter);
    j["standardize"] = d.standardize;
  } else {
    j["generator"] = d.generator;
    j["n"] = d.n;
    j["noise"] = d.noise;
    j["relative_noise"] = d.relative_noise;
  }
  return j;
}

Json to_json(const PresetConfig& p) {
  Json j{{"kind", p.kind}, {"hidden", p.hidden}};
  if (p.kind == "mlp") j["activation"] = to_string(p.activation);
  if (p.kind == "hybrid") j["order"] = p.order;
  if (p.kind == "vanilla_kan") {
    j["spline_order"] = p.spline_order;
    j["grid"] = p.grid;
  }
  return j;
}

Json to_json(const RunConfig& c) {
  Json j{{"name", c.name}, {"seed", c.seed}, {"data", to_json(c.data)}, {"train", to_json(c.train)}};
  j["attention"] = c.model.attention;
  Json layers = Json::array();
  for (const auto& l : c.model.layers) layers.push_back(to_json(l));
  j["layers"] = layers;
  if (c.preset) j["preset"] = to_json(*c.preset);
  return j;
}

// ---- parsing --------------------------------------------------------------

BasisSpec basis_from_json(const Json& j, const std::string& where) {
  check_keys(j, where,
             {"family", "order", "alpha", "beta", "spline_order", "grid", "numerator_degree", "denominator_degree",
              "domain"});
  const auto fam_name = field<std::string>(j, "family", "", where);
  if (fam_name.empty()) throw ConfigError(where + ".family: required");
  const Family fam = at_field(where + ".family", [&] { return family_from_string(lower(fam_name)); });
  BasisSpec b;
  switch (fam) {
    case Family::StandardPoly: b = BasisSpec::standard_poly(field(j, "order", 4, where)); break;
    case Family::Legendre: b = BasisSpec::legendre(field(j, "order", 4, where)); break;
    case Family::Chebyshev: b = BasisSpec::chebyshev(field(j, "order", 4, where)); break;
    case Family::Gegenbauer:
      b = BasisSpec::gegenbauer(field(j, "order", 4, where), field(j, "alpha", 1.0, where));
      break;
    case Family::Jacobi:
      b = BasisSpec::jacobi(field(j, "order", 4, where), field(j, "alpha", 1.0, where), field(j, "beta", 1.0, where));
      break;
    case Family::BSpline:
      if (j.contains("order")) throw ConfigError(where + ".order: bspline size is set by spline_order and grid");
      b = BasisSpec::bspline(field(j, "spline_order", 3, where), field(j, "grid", 5, where));
      break;
    case Family::GaussianRBF: b = BasisSpec::gaussian_rbf(field(j, "order", 4, where)); break;
    case Family::Sine: b = BasisSpec::sine(field(j, "order", 4, where)); break;
    case Family::Rational:
      if (j.contains("order")) throw ConfigError(where + ".order: rational size is set by its degrees");
      b = BasisSpec::rational(field(j, "numerator_degree", 3, where), field(j, "denominator_degree", 2, where));
      break;
  }
  if (j.contains("domain")) {
    b.domain = at_field(where + ".domain", [&] { return domain_map_from_string(field<std::string>(j, "domain", "", where)); });
  }
  at_field(where, [&] { b.validate(); });
  return b;
}

namespace {

RegConfig reg_from_json(const Json& j, const RegConfig& base, const std::string& where) {
  check_keys(j, where, {"placement", "order", "dropout_p", "use_dropout", "use_bn"});
  RegConfig r = base;
  if (j.contains("placement")) {
    r.placement = at_field(where + ".placement",
                           [&] { return reg_placement_from_string(field<std::string>(j, "placement", "", where)); });
  }
  if (j.contains("order")) {
    r.order = at_field(where + ".order", [&] { return reg_order_from_string(field<std::string>(j, "order", "", where)); });
  }
  r.dropout_p = field(j, "dropout_p", r.dropout_p, where);
  r.use_dropout = field(j, "use_dropout", r.use_dropout, where);
  r.use_batchnorm = field(j, "use_bn", r.use_batchnorm, where);
  at_field(where, [&] { r.validate(); });
  return r;
}

Strategy strategy_from_json(const Json& j, const char* tag_key, const char* basis_key, const std::string& where) {
  const auto tag = field<std::string>(j, tag_key, "none", where);
  const bool needs_basis = tag == "global" || tag == "per_input" || tag == "per_neuron_input";
  BasisSpec basis;
  if (needs_basis) {
    if (!j.contains(basis_key)) throw ConfigError(where + "." + basis_key + ": required for strategy '" + tag + "'");
    basis = basis_from_json(j.at(basis_key), where + "." + basis_key);
  } else if (j.contains(basis_key)) {
    throw ConfigError(where + "." + basis_key + ": strategy '" + tag + "' takes no basis");
  }
  return at_field(where + "." + tag_key, [&] { return Strategy::from_tag(lower(tag), basis); });
}

}  // namespace

LayerConfig layer_from_json(const Json& j, const RegConfig& default_reg, const std::string& where) {
  check_keys(j, where, {"n_in", "n_out", "input", "output", "input_basis", "output_basis", "reg", "bias"});
  if (!j.contains("n_in") || !j.contains("n_out")) throw ConfigError(where + ": n_in and n_out are required");
  LayerConfig l;
  l.n_in = field(j, "n_in", 0, where);
  l.n_out = field(j, "n_out", 0, where);
  l.input = strategy_from_json(j, "input", "input_basis", where);
  l.output = strategy_from_json(j, "output", "output_basis", where);
  l.reg = j.contains("reg") ? reg_from_json(j.at("reg"), default_reg, where + ".reg") : default_reg;
  l.has_bias = field(j, "bias", true, where);
  at_field(where, [&] { l.validate(); });
  return l;
}

ModelConfig model_from_json(const Json& j, const std::string& where) {
  check_keys(j, where, {"layers", "attention", "seed", "reg"});
  ModelConfig m;
  m.attention = field(j, "attention", false, where);
  m.seed = field<std::uint64_t>(j, "seed", 0, where);
  const RegConfig reg = j.contains("reg") ? reg_from_json(j.at("reg"), {}, where + ".reg") : RegConfig{};
  if (!j.contains("layers") || !j.at("layers").is_array()) throw ConfigError(where + ".layers: required array");
  int idx = 0;
  for (const auto& lj : j.at("layers")) {
    m.layers.push_back(layer_from_json(lj, reg, where + ".layers[" + std::to_string(idx++) + "]"));
  }
  m.validate();
  return m;
}

namespace {

DataConfig data_from_json(const Json& j, const std::string& where) {
  check_keys(j, where,
             {"generator", "n", "noise", "relative_noise", "path", "target", "delimiter", "standardize", "split"});
  DataConfig d;
  d.generator = field<std::string>(j, "generator", "", where);
  d.path = field<std::string>(j, "path", "", where);
  if (d.generator.empty() == d.path.empty()) throw ConfigError(where + ": set exactly one of generator or path");
  if (!d.generator.empty()) {
    const auto names = generator_names();
    if (std::find(names.begin(), names.end(), d.generator) == names.end()) {
      throw ConfigError(where + ".generator: unknown generator '" + d.generator + "'");
    }
  }
  d.n = field(j, "n", d.n, where);
  if (d.n < 3) throw ConfigError(where + ".n: need at least 3 samples");
  d.noise = field(j, "noise", d.noise, where);
  if (!(d.noise >= 0.0)) throw ConfigError(where + ".noise: must be >= 0");
  d.relative_noise = field(j, "relative_noise", d.relative_noise, where);
  d.target = field<std::string>(j, "target", "", where);
  if (!d.path.empty() && d.target.empty()) throw ConfigError(where + ".target: required with path");
  const auto delim = field<std::string>(j, "delimiter", ",", where);
  if (delim.size() != 1) throw ConfigError(where + ".delimiter: must be one character");
  d.delimiter = delim[0];
  d.standardize = field(j, "standardize", d.standardize, where);
  if (j.contains("split")) {
    const auto s = field<std::vector<double>>(j, "split", {}, where);
    if (s.size() != 3) throw ConfigError(where + ".split: expected [train, val, test]");
    d.train_frac = s[0];
    d.val_frac = s[1];
    d.test_frac = s[2];
    if (std::abs(s[0] + s[1] + s[2] - 1.0) > 1e-9 || s[0] <= 0.0 || s[1] < 0.0 || s[2] <= 0.0) {
      throw ConfigError(where + ".split: fractions must be positive and sum to 1");
    }
  }
  return d;
}

PresetConfig preset_from_json(const Json& j, const std::string& where) {
  check_keys(j, where, {"kind", "hidden", "activation", "order", "spline_order", "grid"});
  PresetConfig p;
  p.kind = field<std::string>(j, "kind", "", where);
  if (p.kind != "mlp" && p.kind != "vanilla_kan" && p.kind != "hybrid") {
    throw ConfigError(where + ".kind: expected mlp | vanilla_kan | hybrid, got '" + p.kind + "'");
  }
  p.hidden = field<std::vector<int>>(j, "hidden", {}, where);
  for (int h : p.hidden) {
    if (h < 1) throw ConfigError(where + ".hidden: widths must be >= 1");
  }
  if (j.contains("activation")) {
    p.activation = at_field(where + ".activation",
                            [&] { return fixed_fn_from_string(field<std::string>(j, "activation", "", where)); });
  }
  p.order = field(j, "order", p.order, where);
  p.spline_order = field(j, "spline_order", p.spline_order, where);
  p.grid = field(j, "grid", p.grid, where);
  if (p.order < 1 || p.order > kMaxBasisOrder) throw ConfigError(where + ".order: out of range");
  if (p.spline_order < 1 || p.grid < 1) throw ConfigError(where + ": spline_order and grid must be >= 1");
  return p;
}

TrainConfig train_from_json(const Json& j, const std::string& where) {
  check_keys(j, where,
             {"optimizer", "lr", "beta1", "beta2", "eps", "epochs", "batch_size", "weight_decay", "attention_l1",
              "patience", "clip_norm", "normalize_inputs", "normalize_target"});
  TrainConfig t;
  const auto opt = field<std::string>(j, "optimizer", "adam", where);
  if (opt == "adam") t.optimizer.kind = OptimizerKind::Adam;
  else if (opt == "sgd") t.optimizer.kind = OptimizerKind::Sgd;
  else throw ConfigError(where + ".optimizer: expected adam | sgd, got '" + opt + "'");
  t.optimizer.lr = field(j, "lr", t.optimizer.lr, where);
  t.optimizer.beta1 = field(j, "beta1", t.optimizer.beta1, where);
  t.optimizer.beta2 = field(j, "beta2", t.optimizer.beta2, where);
  t.optimizer.eps = field(j, "eps", t.optimizer.eps, where);
  t.epochs = field(j, "epochs", t.epochs, where);
  t.batch_size = field(j, "batch_size", t.batch_size, where);
  t.weight_decay = field(j, "weight_decay", t.weight_decay, where);
  t.attention_l1 = field(j, "attention_l1", t.attention_l1, where);
  t.patience = field(j, "patience", t.patience, where);
  t.clip_norm = field(j, "clip_norm", t.clip_norm, where);
  t.normalize_inputs = field(j, "normalize_inputs", true, where);
  t.normalize_target = field(j, "normalize_target", true, where);
  at_field(where, [&] { t.validate(); });
  return t;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::string msg = e.what();
    const auto pos = msg.find("syntax error");
    throw ConfigError("config " + line_col(text, e.byte) + ": " + (pos == std::string::npos ? msg : msg.substr(pos)));
  }
  const std::string root = "config";
  check_keys(j, root, {"name", "seed", "data", "preset", "layers", "attention", "reg", "train"});
  RunConfig c;
  c.name = field<std::string>(j, "name", c.name, root);
  if (c.name.empty() || c.name.find_first_of("/\\ \t") != std::string::npos) {
    throw ConfigError("config.name: must be non-empty without spaces or slashes");
  }
  c.seed = field<std::uint64_t>(j, "seed", 0, root);
  if (!j.contains("data")) throw ConfigError("config.data: required section");
  c.data = data_from_json(j.at("data"), "config.data");
  c.train = j.contains("train") ? train_from_json(j.at("train"), "config.train") : train_from_json(Json::object(), "config.train");
  if (j.contains("preset") == j.contains("layers")) throw ConfigError("config: set exactly one of preset or layers");
  c.model.attention = field(j, "attention", false, root);
  if (j.contains("preset")) {
    if (j.contains("reg")) throw ConfigError("config.reg: only valid with explicit layers");
    c.preset = preset_from_json(j.at("preset"), "config.preset");
  } else {
    Json mj{{"layers", j.at("layers")}, {"attention", c.model.attention}};
    if (j.contains("reg")) mj["reg"] = j.at("reg");
    c.model = model_from_json(mj, "config");
  }
  c.model.seed = c.seed;
  c.train.seed = c.seed;
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void resolve(RunConfig& cfg, int n_features) {
  cfg.model.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  if (cfg.preset) {
    std::vector<int> dims{n_features};
    dims.insert(dims.end(), cfg.preset->hidden.begin(), cfg.preset->hidden.end());
    dims.push_back(1);
    ModelConfig m;
    if (cfg.preset->kind == "mlp") m = preset_mlp(dims, cfg.preset->activation, cfg.seed);
    else if (cfg.preset->kind == "vanilla_kan")
      m = preset_vanilla_kan(dims, BasisSpec::bspline(cfg.preset->spline_order, cfg.preset->grid), cfg.seed);
    else m = preset_hybrid(dims, cfg.preset->order, cfg.seed);
    m.attention = cfg.model.attention;
    cfg.model = m;
  }
  if (cfg.model.n_inputs() != n_features) {
    throw ConfigError("config.layers[0].n_in: " + std::to_string(cfg.model.n_inputs()) + " but the dataset has " +
                      std::to_string(n_features) + " features");
  }
  if (cfg.model.n_outputs() != 1) throw ConfigError("config.layers: the last layer must have n_out = 1");
  cfg.model.validate();
}

std::string canonical_text(const RunConfig& c) { return to_json(c).dump(); }

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(canonical_text(c)); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string run_id(const RunConfig& c) { return c.name + "-" + hex64(config_hash(c)).substr(0, 12); }

Dataset load_dataset(const DataConfig& d, std::uint64_t seed) {
  if (!d.path.empty()) return load_delimited(d.path, {d.target, d.delimiter, d.standardize});
  return generate(d.generator, d.n, d.noise, seed, d.relative_noise);
}

// ---- checkpoints ----------------------------------------------------------

namespace {

constexpr char kMagic[16] = "DFKAN-CKPT-v1";

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw ConfigError("checkpoint truncated");
  return v;
}

std::vector<Tensor*> buffer_tensors(Model& model) {
  std::vector<Tensor*> out;
  for (auto& b : model_buffers(model)) out.push_back(b.tensor);
  return out;
}

void write_doubles(std::ostream& out, const double* p, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 8));
}

void read_doubles(std::istream& in, double* p, Eigen::Index n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 8));
  if (!in) throw ConfigError("checkpoint truncated");
}

void write_norm(std::ostream& out, const Normalizer& n) {
  put_u64(out, static_cast<std::uint64_t>(n.scale.size()));
  write_doubles(out, n.scale.data(), n.scale.size());
  write_doubles(out, n.offset.data(), n.offset.size());
}

void read_norm(std::istream& in, Normalizer& n) {
  const auto k = static_cast<Eigen::Index>(get_u64(in));
  if (k > 1'000'000) throw ConfigError("checkpoint normalizer size is implausible");
  n.scale.resize(k);
  n.offset.resize(k);
  read_doubles(in, n.scale.data(), k);
  read_doubles(in, n.offset.data(), k);
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 16);
  put_u64(out, hash);
  const auto params = model_parameters(model);
  put_u64(out, static_cast<std::uint64_t>(enumerate_scalars(model)));
  for (const auto& p : params) write_doubles(out, p.tensor->data(), p.tensor->size());
  const auto bufs = buffer_tensors(model);
  long long nb = 0;
  for (const auto* b : bufs) nb += b->size();
  put_u64(out, static_cast<std::uint64_t>(nb));
  for (const auto* b : bufs) write_doubles(out, b->data(), b->size());
  write_norm(out, model.input_norm);
  write_norm(out, model.output_norm);
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

void load_checkpoint(const std::string& path, Model& model, std::uint64_t hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  char magic[16];
  in.read(magic, 16);
  if (!in || std::memcmp(magic, kMagic, 16) != 0) throw ConfigError("'" + path + "' is not a checkpoint");
  const auto stored = get_u64(in);
  if (stored != hash) {
    throw ConfigError("checkpoint config hash " + hex64(stored) + " does not match config hash " + hex64(hash));
  }
  const auto count = get_u64(in);
  if (count != static_cast<std::uint64_t>(enumerate_scalars(model))) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                      std::to_string(enumerate_scalars(model)));
  }
  for (auto& p : model_parameters(model)) read_doubles(in, p.tensor->data(), p.tensor->size());
  const auto bufs = buffer_tensors(model);
  long long nb = 0;
  for (const auto* b : bufs) nb += b->size();
  if (get_u64(in) != static_cast<std::uint64_t>(nb)) throw ConfigError("checkpoint buffer size mismatch");
  for (auto* b : bufs) read_doubles(in, b->data(), b->size());
  read_norm(in, model.input_norm);
  read_norm(in, model.output_norm);
}

}  // namespace dfkan
