#include "dal/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "dal/error.hpp"

namespace dal::runner {

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kTrainDal: return "train-dal";
    case Mode::kTrainOe: return "train-oe";
    case Mode::kTrainErm: return "train-erm";
    case Mode::kSweepRho: return "sweep-rho";
    case Mode::kDualityCheck: return "duality-check";
    case Mode::kGradCheck: return "grad-check";
    case Mode::kEvalOnly: return "eval-only";
  }
  return "unknown";
}

std::optional<Mode> parse_mode(std::string_view name) {
  for (Mode m : {Mode::kTrainDal, Mode::kTrainOe, Mode::kTrainErm, Mode::kSweepRho,
                 Mode::kDualityCheck, Mode::kGradCheck, Mode::kEvalOnly}) {
    if (mode_name(m) == name) return m;
  }
  return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw FormatError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) +
                    "' as " + expected);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "a finite number");
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a nonnegative integer");
  return out;
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

// Shortest round-trip form.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += f(items[i]);
  }
  return out;
}

struct KeyHandler {
  std::string key;
  std::function<void(ExperimentSpec&, std::string_view)> set;
  std::function<std::string(const ExperimentSpec&)> get;
};

template <class Member>
KeyHandler dbl(std::string key, Member member) {
  return {key,
          [member, key](ExperimentSpec& s, std::string_view v) { member(s) = to_double(key, v); },
          [member](const ExperimentSpec& s) {
            return fmt_double(member(const_cast<ExperimentSpec&>(s)));
          }};
}

template <class Member>
KeyHandler uint(std::string key, Member member) {
  return {key,
          [member, key](ExperimentSpec& s, std::string_view v) {
            member(s) = static_cast<std::remove_reference_t<decltype(member(s))>>(to_uint(key, v));
          },
          [member](const ExperimentSpec& s) {
            return std::to_string(member(const_cast<ExperimentSpec&>(s)));
          }};
}

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> table = [] {
    std::vector<KeyHandler> t;
    t.push_back({"mode",
                 [](ExperimentSpec& s, std::string_view v) {
                   auto m = parse_mode(v);
                   if (!m) bad_value("mode", v, "a mode name");
                   s.mode = *m;
                 },
                 [](const ExperimentSpec& s) { return std::string(mode_name(s.mode)); }});
    t.push_back({"seeds",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.seeds.clear();
                   for (auto item : split_list(v)) s.seeds.push_back(to_uint("seeds", item));
                 },
                 [](const ExperimentSpec& s) {
                   return join<std::uint64_t>(s.seeds, [](auto x) { return std::to_string(x); });
                 }});
    t.push_back({"scores",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.scores.clear();
                   for (auto item : split_list(v)) {
                     auto k = eval::parse_score(item);
                     if (!k) bad_value("scores", item, "msp, energy or max_logit");
                     s.scores.push_back(*k);
                   }
                 },
                 [](const ExperimentSpec& s) {
                   return join<eval::ScoreKind>(
                       s.scores, [](auto k) { return std::string(eval::score_name(k)); });
                 }});
    t.push_back({"output_dir",
                 [](ExperimentSpec& s, std::string_view v) { s.output_dir = std::string(v); },
                 [](const ExperimentSpec& s) { return s.output_dir.string(); }});
    t.push_back(uint("workers", [](ExperimentSpec& s) -> std::size_t& { return s.workers; }));

    // Trainer.
    t.push_back(dbl("rho", [](ExperimentSpec& s) -> double& { return s.dal.rho; }));
    t.push_back(dbl("gamma_max", [](ExperimentSpec& s) -> double& { return s.dal.gamma_max; }));
    t.push_back(dbl("gamma_init", [](ExperimentSpec& s) -> double& { return s.dal.gamma_init; }));
    t.push_back(dbl("beta", [](ExperimentSpec& s) -> double& { return s.dal.beta; }));
    t.push_back(dbl("alpha", [](ExperimentSpec& s) -> double& { return s.dal.alpha; }));
    t.push_back({"alpha_on",
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v == "ood_term")
                     s.dal.alpha_on = train::AlphaOn::kOodTerm;
                   else if (v == "id_term")
                     s.dal.alpha_on = train::AlphaOn::kIdTerm;
                   else
                     bad_value("alpha_on", v, "ood_term or id_term");
                 },
                 [](const ExperimentSpec& s) {
                   return std::string(s.dal.alpha_on == train::AlphaOn::kOodTerm ? "ood_term"
                                                                                 : "id_term");
                 }});
    t.push_back(dbl("sigma", [](ExperimentSpec& s) -> double& { return s.dal.sigma; }));
    t.push_back(dbl("ps", [](ExperimentSpec& s) -> double& { return s.dal.ps; }));
    t.push_back(uint("num_search", [](ExperimentSpec& s) -> std::size_t& { return s.dal.num_search; }));
    t.push_back(dbl("lr", [](ExperimentSpec& s) -> double& { return s.dal.lr; }));
    t.push_back(uint("id_batch", [](ExperimentSpec& s) -> std::size_t& { return s.dal.id_batch; }));
    t.push_back(uint("ood_batch", [](ExperimentSpec& s) -> std::size_t& { return s.dal.ood_batch; }));
    t.push_back(uint("epochs", [](ExperimentSpec& s) -> std::size_t& { return s.dal.epochs; }));
    t.push_back({"rho_grid",
                 [](ExperimentSpec& s, std::string_view v) {
                   s.rho_grid.clear();
                   for (auto item : split_list(v)) s.rho_grid.push_back(to_double("rho_grid", item));
                 },
                 [](const ExperimentSpec& s) {
                   return join<double>(s.rho_grid, [](double x) { return fmt_double(x); });
                 }});

    // Architecture.
    t.push_back({"hidden_widths",
                 [](ExperimentSpec& s, std::string_view v) {
                   const std::size_t emb = s.arch.embedding_dim();
                   const bool identity = s.arch.extractor_widths.empty();
                   std::vector<std::size_t> w;
                   if (v != "none")
                     for (auto item : split_list(v)) w.push_back(to_uint("hidden_widths", item));
                   if (!identity) w.push_back(emb);
                   s.arch.extractor_widths = std::move(w);
                 },
                 [](const ExperimentSpec& s) {
                   const auto& w = s.arch.extractor_widths;
                   if (w.size() <= 1) return std::string("none");
                   std::vector<std::size_t> hidden(w.begin(), w.end() - 1);
                   return join<std::size_t>(hidden, [](auto x) { return std::to_string(x); });
                 }});
    t.push_back({"embedding_dim",
                 [](ExperimentSpec& s, std::string_view v) {
                   const auto d = to_uint("embedding_dim", v);
                   if (s.arch.extractor_widths.empty())
                     s.arch.extractor_widths.push_back(d);
                   else
                     s.arch.extractor_widths.back() = d;
                 },
                 [](const ExperimentSpec& s) { return std::to_string(s.arch.embedding_dim()); }});

    // Scene.
    t.push_back(uint("classes", [](ExperimentSpec& s) -> std::size_t& { return s.scene.classes; }));
    t.push_back(uint("n_train", [](ExperimentSpec& s) -> std::size_t& { return s.scene.n_train; }));
    t.push_back(uint("n_test", [](ExperimentSpec& s) -> std::size_t& { return s.scene.n_test; }));
    t.push_back(uint("m_aux", [](ExperimentSpec& s) -> std::size_t& { return s.scene.m_aux; }));
    t.push_back(uint("m_real", [](ExperimentSpec& s) -> std::size_t& { return s.scene.m_real; }));
    t.push_back(dbl("id_radius", [](ExperimentSpec& s) -> double& { return s.scene.id_radius; }));
    t.push_back(dbl("class_std", [](ExperimentSpec& s) -> double& { return s.scene.class_std; }));
    t.push_back(dbl("aux_r_lo", [](ExperimentSpec& s) -> double& { return s.scene.aux_r_lo; }));
    t.push_back(dbl("aux_r_hi", [](ExperimentSpec& s) -> double& { return s.scene.aux_r_hi; }));
    t.push_back(dbl("delta", [](ExperimentSpec& s) -> double& { return s.scene.delta; }));
    t.push_back(uint("discrepancy_k", [](ExperimentSpec& s) -> std::size_t& { return s.discrepancy_k; }));
    t.push_back(uint("discrepancy_repeats",
                     [](ExperimentSpec& s) -> std::size_t& { return s.discrepancy_repeats; }));

    // eval-only / duality-check.
    t.push_back({"checkpoint",
                 [](ExperimentSpec& s, std::string_view v) { s.checkpoint = std::string(v); },
                 [](const ExperimentSpec& s) { return s.checkpoint.string(); }});
    t.push_back({"eval_method",
                 [](ExperimentSpec& s, std::string_view v) {
                   if (v == "dal")
                     s.eval_method = train::Method::kDal;
                   else if (v == "oe")
                     s.eval_method = train::Method::kOe;
                   else if (v == "erm")
                     s.eval_method = train::Method::kErm;
                   else
                     bad_value("eval_method", v, "dal, oe or erm");
                 },
                 [](const ExperimentSpec& s) { return std::string(train::method_name(s.eval_method)); }});
    t.push_back({"instances",
                 [](ExperimentSpec& s, std::string_view v) { s.instances = std::string(v); },
                 [](const ExperimentSpec& s) { return s.instances.string(); }});
    t.push_back(uint("random_instances",
                     [](ExperimentSpec& s) -> std::size_t& { return s.random_instances; }));
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& h : handlers()) k.push_back(h.key);
    return k;
  }();
  return keys;
}

ExperimentSpec default_spec() { return ExperimentSpec{}; }

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw InvalidArgument("seed list must be non-empty");
  if (workers == 0) throw InvalidArgument("workers must be positive");
  if (scores.empty()) throw InvalidArgument("at least one scoring function is required");
  dal.validate();
  scene.validate();
  arch.validate();
  if (arch.input_dim != 2) throw InvalidArgument("the synthetic scene is two-dimensional");
  if (arch.num_classes != scene.classes) {
    throw InvalidArgument("architecture class count must match the scene");
  }
  if (mode == Mode::kSweepRho) {
    if (rho_grid.empty()) throw InvalidArgument("sweep-rho needs a non-empty rho_grid");
    for (double r : rho_grid)
      if (r < 0.0) throw InvalidArgument("rho_grid entries must be >= 0");
  }
  if (mode == Mode::kEvalOnly && checkpoint.empty()) {
    throw InvalidArgument("eval-only needs a checkpoint path");
  }
  if (discrepancy_k > 64) throw InvalidArgument("discrepancy_k must be <= 64");
}

void apply_setting(ExperimentSpec& spec, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "schema_version") {
    if (to_uint(key, value) != static_cast<std::uint64_t>(kConfigSchemaVersion)) {
      throw FormatError("unsupported config schema_version " + std::string(value));
    }
    return;
  }
  for (const auto& h : handlers()) {
    if (h.key == key) {
      h.set(spec, value);
      if (key == "classes") spec.arch.num_classes = spec.scene.classes;
      return;
    }
  }
  throw FormatError("unknown config key '" + std::string(key) + "'");
}

void apply_config(ExperimentSpec& spec, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = line;
    if (const auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
    v = trim(v);
    if (v.empty()) continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    try {
      apply_setting(spec, v.substr(0, eq), v.substr(eq + 1));
    } catch (const FormatError& e) {
      throw FormatError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(ExperimentSpec& spec, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path.string());
  apply_config(spec, in);
}

std::string canonical_config(const ExperimentSpec& spec) {
  std::ostringstream os;
  os << "schema_version = " << kConfigSchemaVersion << '\n';
  for (const auto& h : handlers()) os << h.key << " = " << h.get(spec) << '\n';
  return os.str();
}

std::string spec_hash(const ExperimentSpec& spec) {
  // Output paths do not change results, so they stay out of the hash.
  ExperimentSpec s = spec;
  s.output_dir.clear();
  s.workers = 1;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_config(s)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dal::runner
