#include "drophmc/config.hpp"

#include "drophmc/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace drophmc {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != end) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty list entry in " + key);
    out.push_back(parse_number<T>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F format) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format(values[i]);
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string& name, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
  bool runtime = false;  // does not affect results; left out of output echoes
};

const std::vector<Field>& fields() {
  using S = std::string;
  static const std::vector<Field> table = {
      {"run", "algorithm",
       [](RunConfig& c, const S&, const S& v) { c.sampler.algorithm = parse_algorithm(v); },
       [](const RunConfig& c) { return S(to_string(c.sampler.algorithm)); }},
      {"run", "chains", [](RunConfig& c, const S& k, const S& v) { c.chains = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.chains); }},
      {"run", "jobs", [](RunConfig& c, const S& k, const S& v) { c.jobs = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.jobs); }, true},
      {"run", "out", [](RunConfig& c, const S&, const S& v) { c.out = v; },
       [](const RunConfig& c) { return c.out.string(); }, true},
      {"run", "seed",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.seed = parse_number<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.chain.seed); }},

      {"data", "format",
       [](RunConfig& c, const S& k, const S& v) {
         if (v != "idx" && v != "table") throw ConfigError(k + " must be idx or table");
         c.data.format = v;
       },
       [](const RunConfig& c) { return c.data.format; }},
      {"data", "train_images", [](RunConfig& c, const S&, const S& v) { c.data.train_images = v; },
       [](const RunConfig& c) { return c.data.train_images.string(); }},
      {"data", "train_labels", [](RunConfig& c, const S&, const S& v) { c.data.train_labels = v; },
       [](const RunConfig& c) { return c.data.train_labels.string(); }},
      {"data", "test_images", [](RunConfig& c, const S&, const S& v) { c.data.test_images = v; },
       [](const RunConfig& c) { return c.data.test_images.string(); }},
      {"data", "test_labels", [](RunConfig& c, const S&, const S& v) { c.data.test_labels = v; },
       [](const RunConfig& c) { return c.data.test_labels.string(); }},
      {"data", "train_table", [](RunConfig& c, const S&, const S& v) { c.data.train_table = v; },
       [](const RunConfig& c) { return c.data.train_table.string(); }},
      {"data", "test_table", [](RunConfig& c, const S&, const S& v) { c.data.test_table = v; },
       [](const RunConfig& c) { return c.data.test_table.string(); }},
      {"data", "delimiter",
       [](RunConfig& c, const S& k, const S& v) {
         if (v == "tab") {
           c.data.delimiter = '\t';
         } else if (v.size() == 1) {
           c.data.delimiter = v[0];
         } else {
           throw ConfigError(k + " must be a single character or 'tab'");
         }
       },
       [](const RunConfig& c) { return c.data.delimiter == '\t' ? S("tab") : S(1, c.data.delimiter); }},
      {"data", "classes", [](RunConfig& c, const S& k, const S& v) { c.data.classes = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.data.classes); }},
      {"data", "train_limit",
       [](RunConfig& c, const S& k, const S& v) { c.data.train_limit = parse_number<Index>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.data.train_limit); }},
      {"data", "test_limit",
       [](RunConfig& c, const S& k, const S& v) { c.data.test_limit = parse_number<Index>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.data.test_limit); }},

      {"model", "prior_variance",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.prior.variance = parse_number<double>(k, v); },
       [](const RunConfig& c) { return format_double(c.sampler.prior.variance); }},

      // One step size and one mass serve every algorithm.
      {"sampler", "step_size",
       [](RunConfig& c, const S& k, const S& v) {
         c.sampler.sg.step_size = c.sampler.hmc.step_size = parse_number<double>(k, v);
       },
       [](const RunConfig& c) { return format_double(c.sampler.sg.step_size); }},
      {"sampler", "friction",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.sg.friction = parse_number<double>(k, v); },
       [](const RunConfig& c) { return format_double(c.sampler.sg.friction); }},
      {"sampler", "beta",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.sg.noise_discount = parse_number<double>(k, v); },
       [](const RunConfig& c) { return format_double(c.sampler.sg.noise_discount); }},
      {"sampler", "inner_steps",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.sg.inner_steps = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.sg.inner_steps); }},
      {"sampler", "batch_size",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.sg.batch_size = parse_number<Index>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.sg.batch_size); }},
      {"sampler", "keep_prob",
       [](RunConfig& c, const S& k, const S& v) {
         if (v.empty()) {
           c.sampler.sg.keep_prob.reset();
         } else {
           c.sampler.sg.keep_prob = parse_number<double>(k, v);
         }
       },
       [](const RunConfig& c) {
         return c.sampler.sg.keep_prob ? format_double(*c.sampler.sg.keep_prob) : S();
       }},
      {"sampler", "mask_target",
       [](RunConfig& c, const S&, const S& v) { c.sampler.sg.mask_target = parse_mask_target(v); },
       [](const RunConfig& c) { return S(to_string(c.sampler.sg.mask_target)); }},
      {"sampler", "leapfrog_steps",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.hmc.leapfrog_steps = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.hmc.leapfrog_steps); }},
      {"sampler", "mass",
       [](RunConfig& c, const S& k, const S& v) {
         c.sampler.sg.mass = c.sampler.hmc.mass = parse_number<double>(k, v);
       },
       [](const RunConfig& c) { return format_double(c.sampler.sg.mass); }},

      {"chain", "warmup",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.warmup = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.chain.warmup); }},
      {"chain", "epochs",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.epochs = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.chain.epochs); }},
      {"chain", "thinning",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.thinning = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.chain.thinning); }},
      {"chain", "keep_last",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.keep_last = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampler.chain.keep_last); }},
      {"chain", "whiten",
       [](RunConfig& c, const S& k, const S& v) { c.sampler.chain.whiten = parse_bool(k, v); },
       [](const RunConfig& c) { return S(c.sampler.chain.whiten ? "true" : "false"); }},

      {"predict", "samples",
       [](RunConfig& c, const S& k, const S& v) { c.predict.samples = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.predict.samples); }},
      {"predict", "selection",
       [](RunConfig& c, const S&, const S& v) { c.predict.selection = parse_draw_selection(v); },
       [](const RunConfig& c) { return S(to_string(c.predict.selection)); }},
      {"predict", "stride",
       [](RunConfig& c, const S& k, const S& v) { c.predict.stride = parse_number<Index>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.predict.stride); }},
      {"predict", "mask_at_prediction",
       [](RunConfig& c, const S& k, const S& v) { c.predict.mask_at_prediction = parse_bool(k, v); },
       [](const RunConfig& c) { return S(c.predict.mask_at_prediction ? "true" : "false"); }},
      {"predict", "test_whitening",
       [](RunConfig& c, const S&, const S& v) { c.predict.test_whitening = parse_test_whitening(v); },
       [](const RunConfig& c) { return S(to_string(c.predict.test_whitening)); }},
      {"predict", "examples",
       [](RunConfig& c, const S& k, const S& v) {
         c.predict.examples = v.empty() ? std::vector<Index>{} : parse_list<Index>(k, v);
       },
       [](const RunConfig& c) {
         return join(c.predict.examples, [](Index i) { return std::to_string(i); });
       }},

      {"sweep", "keep_probs",
       [](RunConfig& c, const S& k, const S& v) { c.sweep.keep_probs = parse_list<double>(k, v); },
       [](const RunConfig& c) { return join(c.sweep.keep_probs, format_double); }},

      {"diagnose", "target", [](RunConfig& c, const S&, const S& v) { c.diagnose.target = v; },
       [](const RunConfig& c) { return c.diagnose.target; }},
      {"diagnose", "step_size",
       [](RunConfig& c, const S& k, const S& v) { c.diagnose.step_size = parse_number<double>(k, v); },
       [](const RunConfig& c) { return format_double(c.diagnose.step_size); }},
      {"diagnose", "steps",
       [](RunConfig& c, const S& k, const S& v) { c.diagnose.steps = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.diagnose.steps); }},
      {"diagnose", "keep_prob",
       [](RunConfig& c, const S& k, const S& v) { c.diagnose.keep_prob = parse_number<double>(k, v); },
       [](const RunConfig& c) { return format_double(c.diagnose.keep_prob); }},
  };
  return table;
}

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (section == f.section && key == f.key) return f;
  }
  throw ConfigError("unknown configuration key '" + section + "." + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  // Full chains are ~60k draws of 7,850 doubles; keep a tail large enough
  // for prediction and strided selection.
  sampler.chain.keep_last = 200;
}

void RunConfig::validate() const {
  if (chains < 1) throw ConfigError("chains must be at least 1");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (data.classes < 0) throw ConfigError("data.classes must be non-negative");
  if (data.train_limit < 0 || data.test_limit < 0) throw ConfigError("data limits must be non-negative");
  if (predict.samples < 1) throw ConfigError("predict.samples must be at least 1");
  if (predict.stride < 1) throw ConfigError("predict.stride must be at least 1");
  if (sweep.keep_probs.empty()) throw ConfigError("sweep.keep_probs is empty");
  for (double q : sweep.keep_probs) {
    if (!(q > 0 && q <= 1)) throw ConfigError("sweep keep probabilities must lie in (0, 1]");
  }
  if (diagnose.step_size <= 0) throw ConfigError("diagnose.step_size must be positive");
  if (diagnose.steps < 1) throw ConfigError("diagnose.steps must be at least 1");
  const SamplerSettings s = resolved_sampler();
  s.prior.validate();
  s.chain.validate();
  if (s.algorithm == Algorithm::hmc) {
    s.hmc.validate();
  } else {
    s.sg.validate(s.algorithm);
  }
  if (s.chain.keep_last != 0 && s.chain.keep_last < predict.samples) {
    throw ConfigError("chain.keep_last is smaller than predict.samples");
  }
}

SamplerSettings RunConfig::resolved_sampler() const {
  SamplerSettings s = sampler;
  if (s.algorithm == Algorithm::dsghmc && s.sg.mask_target == MaskTarget::none) {
    s.sg.mask_target = MaskTarget::inputs;
  }
  return s;
}

void set_value(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("expected section.key, got '" + dotted_key + "'");
  const auto& f = find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
  f.set(config, dotted_key, value);
}

void apply_assignment(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected section.key=value, got '" + assignment + "'");
  set_value(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return section == f.section; });
      if (!known || !body.data().empty()) {
        throw ConfigError("'" + section + "' is not a section (keys must live inside [section] blocks)");
      }
      continue;
    }
    for (const auto& [key, value] : body) {
      find_field(section, key).set(config, section + "." + key, value.data());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_ini(const RunConfig& config, bool include_runtime) {
  std::string out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.runtime && !include_runtime) continue;
    if (current != f.section) {
      if (!current.empty()) out += '\n';
      current = f.section;
      out += '[' + current + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + '\n';
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(std::string(f.section) + "." + f.key);
  return keys;
}

}  // namespace drophmc
