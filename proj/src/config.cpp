#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "phyvid/error.hpp"
#include "phyvid/io.hpp"
#include "phyvid/trainer.hpp"

namespace phyvid {

namespace {

// Reads typed values out of one TOML table and remembers which keys were
// consumed so that typos can be reported.
class Section {
 public:
  Section(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value_exact<bool>()) { out = *v; return; }
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = node->value_exact<int64_t>()) {
        if (*v < 0 && std::is_unsigned_v<T>) fail(key, "must be non-negative");
        out = static_cast<T>(*v);
        return;
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) { out = *v; return; }
    }
    fail(key, "has the wrong type");
  }

  void finish(const std::set<std::string>& subtables = {}) const {
    if (!table_) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!seen_.count(key) && !subtables.count(key))
        throw Error(ErrorKind::Validation, "unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  [[noreturn]] void fail(const char* key, const char* why) const {
    throw Error(ErrorKind::Validation, "config key '" + name_ + "." + key + "' " + why);
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw Error(ErrorKind::Validation, what);
  };
  need(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "loss weights must be non-negative");
  need(lr.assets >= 0 && lr.alpha >= 0 && lr.coords >= 0 && lr.coords_late >= 0 && lr.shift >= 0 && lr.scale >= 0 &&
           lr.xi >= 0 && lr.input >= 0,
       "learning rates must be non-negative");
  need(lr.decay_to > 0 && lr.decay_to <= 1, "lr decay_to must lie in (0, 1]");
  need(stages.pretrain >= 0 && stages.joint >= 0 && stages.rounds >= 0 && stages.between_rounds >= 0 &&
           stages.refine >= 0,
       "stage lengths must be non-negative");
  need(library_degree >= 1 && library_degree <= 7, "library degree must lie in 1..7");
  need(threshold > 0, "threshold must be positive");
  need(reg_epsilon >= 0, "regulariser epsilon must be non-negative");
  need(temperature > 0, "soft-argmax temperature must be positive");
  need(objects >= 0 && objects <= 2, "object count must be 0 (from manifest), 1 or 2");
  need(trace_every >= 1, "trace_every must be at least 1");
  need(init.sprite_size >= 2 && init.threshold > 0 && init.min_component >= 1, "bad init options");
}

TrainConfig TrainConfig::from_toml(const std::string& text, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ":" << e.source().begin.line << ": " << e.description();
    throw Error(ErrorKind::Validation, "config parse error: " + os.str());
  }
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key != "trainer" && key != "sindy" && key != "sprite_codec")
      throw Error(ErrorKind::Validation, "unknown config section '" + key + "'");
  }

  TrainConfig c;
  const toml::table* trainer = root["trainer"].as_table();
  Section tr(trainer, "trainer");
  tr.get("lambda1", c.lambda1);
  tr.get("lambda2", c.lambda2);
  tr.get("lambda3", c.lambda3);
  tr.get("seed", c.seed);
  tr.get("trace_every", c.trace_every);
  tr.get("raw_frames", c.raw_frames);
  tr.get("freeze_transform", c.freeze_transform);
  tr.get("pretrain", c.stages.pretrain);
  tr.get("joint", c.stages.joint);
  tr.get("rounds", c.stages.rounds);
  tr.get("between_rounds", c.stages.between_rounds);
  tr.get("refine", c.stages.refine);
  tr.finish({"lr"});

  Section lr(trainer ? (*trainer)["lr"].as_table() : nullptr, "trainer.lr");
  lr.get("assets", c.lr.assets);
  lr.get("alpha", c.lr.alpha);
  lr.get("coords", c.lr.coords);
  lr.get("coords_late", c.lr.coords_late);
  lr.get("shift", c.lr.shift);
  lr.get("scale", c.lr.scale);
  lr.get("xi", c.lr.xi);
  lr.get("input", c.lr.input);
  lr.get("decay_to", c.lr.decay_to);
  lr.finish();

  Section sd(root["sindy"].as_table(), "sindy");
  sd.get("degree", c.library_degree);
  sd.get("constant", c.library_constant);
  sd.get("threshold", c.threshold);
  sd.get("epsilon", c.reg_epsilon);
  sd.finish();

  Section sc(root["sprite_codec"].as_table(), "sprite_codec");
  sc.get("temperature", c.temperature);
  sc.get("threshold", c.init.threshold);
  sc.get("min_component", c.init.min_component);
  sc.get("objects", c.objects);
  sc.finish();

  c.validate();
  return c;
}

TrainConfig TrainConfig::from_toml_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_toml(ss.str(), path.string());
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"trainer",
       {{"lambda1", lambda1},
        {"lambda2", lambda2},
        {"lambda3", lambda3},
        {"seed", seed},
        {"trace_every", trace_every},
        {"raw_frames", raw_frames},
        {"freeze_transform", freeze_transform},
        {"pretrain", stages.pretrain},
        {"joint", stages.joint},
        {"rounds", stages.rounds},
        {"between_rounds", stages.between_rounds},
        {"refine", stages.refine},
        {"lr",
         {{"assets", lr.assets},
          {"alpha", lr.alpha},
          {"coords", lr.coords},
          {"coords_late", lr.coords_late},
          {"shift", lr.shift},
          {"scale", lr.scale},
          {"xi", lr.xi},
          {"input", lr.input},
          {"decay_to", lr.decay_to}}}}},
      {"sindy",
       {{"degree", library_degree},
        {"constant", library_constant},
        {"threshold", threshold},
        {"epsilon", reg_epsilon}}},
      {"sprite_codec",
       {{"temperature", temperature},
        {"threshold", init.threshold},
        {"min_component", init.min_component},
        {"objects", objects}}}};
}

std::string TrainConfig::to_toml() const {
  // Round-trips through from_toml; doubles use the shortest exact form.
  std::ostringstream os;
  auto num = [](double v) {
    std::string s = io::fmt_double(v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  };
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[trainer]\n"
     << "lambda1 = " << num(lambda1) << "\n"
     << "lambda2 = " << num(lambda2) << "\n"
     << "lambda3 = " << num(lambda3) << "\n"
     << "seed = " << seed << "\n"
     << "trace_every = " << trace_every << "\n"
     << "raw_frames = " << b(raw_frames) << "\n"
     << "freeze_transform = " << b(freeze_transform) << "\n"
     << "pretrain = " << stages.pretrain << "\n"
     << "joint = " << stages.joint << "\n"
     << "rounds = " << stages.rounds << "\n"
     << "between_rounds = " << stages.between_rounds << "\n"
     << "refine = " << stages.refine << "\n\n"
     << "[trainer.lr]\n"
     << "assets = " << num(lr.assets) << "\n"
     << "alpha = " << num(lr.alpha) << "\n"
     << "coords = " << num(lr.coords) << "\n"
     << "coords_late = " << num(lr.coords_late) << "\n"
     << "shift = " << num(lr.shift) << "\n"
     << "scale = " << num(lr.scale) << "\n"
     << "xi = " << num(lr.xi) << "\n"
     << "input = " << num(lr.input) << "\n"
     << "decay_to = " << num(lr.decay_to) << "\n\n"
     << "[sindy]\n"
     << "degree = " << library_degree << "\n"
     << "constant = " << b(library_constant) << "\n"
     << "threshold = " << num(threshold) << "\n"
     << "epsilon = " << num(reg_epsilon) << "\n\n"
     << "[sprite_codec]\n"
     << "temperature = " << num(temperature) << "\n"
     << "threshold = " << num(init.threshold) << "\n"
     << "min_component = " << init.min_component << "\n"
     << "objects = " << objects << "\n";
  return os.str();
}

}  // namespace phyvid
