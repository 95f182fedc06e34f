#include "shcanet/cli/config.hpp"

#include <cstdio>
#include <set>

#include "shcanet/data/dataset.hpp"

namespace shcanet::cli {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  gains.validate();
  optim.validate();
  require(static_cast<int>(class_names.size()) == model.head.num_classes,
          "config: " + std::to_string(class_names.size()) + " class names for num_classes " +
              std::to_string(model.head.num_classes));
  std::set<std::string> uniq(class_names.begin(), class_names.end());
  require(uniq.size() == class_names.size(), "config: class names must be unique");
  for (const auto& n : class_names) require(!n.empty(), "config: empty class name");
  const bool bifpn = model.neck.fusion == ad::FusionMode::fast_normalized && model.neck.skip_edges;
  const bool panet = model.neck.fusion == ad::FusionMode::plain_sum && !model.neck.skip_edges;
  require(bifpn || panet,
          "config: neck must be bifpn (fast_normalized fusion, skip edges on) or panet-sum (plain_sum, skip edges off)");
  require(eval_every >= 0, "config: eval_every must be >= 0");
  for (double t : {eval_conf, eval_iou, operating_conf, detect_conf, detect_iou})
    require(t >= 0 && t <= 1, "config: thresholds must lie in [0, 1]");
}

AblationRow ablation_row(const RunConfig& cfg) {
  AblationRow r;
  r.backbone = cfg.model.backbone.attention ? BackboneRow::shufflecanet : BackboneRow::shufflenetv2;
  r.neck = cfg.model.neck.fusion == ad::FusionMode::plain_sum ? NeckRow::panet_sum : NeckRow::bifpn;
  r.loss = cfg.gains.alpha == 1.0 ? LossRow::ciou : LossRow::alpha_ciou;
  return r;
}

void apply_row(RunConfig& cfg, const AblationRow& row) {
  cfg.model.backbone.attention = row.backbone == BackboneRow::shufflecanet;
  const bool bifpn = row.neck == NeckRow::bifpn;
  cfg.model.neck.fusion = bifpn ? ad::FusionMode::fast_normalized : ad::FusionMode::plain_sum;
  cfg.model.neck.skip_edges = bifpn;
  cfg.gains.alpha = row.loss == LossRow::ciou ? 1.0 : 3.0;
}

namespace {

const char* name_of(BackboneRow r) { return r == BackboneRow::shufflecanet ? "shufflecanet" : "shufflenetv2"; }
const char* name_of(NeckRow r) { return r == NeckRow::bifpn ? "bifpn" : "panet-sum"; }
const char* name_of(LossRow r) { return r == LossRow::alpha_ciou ? "alpha-ciou" : "ciou"; }

const char* activation_name(nn::Activation a) {
  switch (a) {
    case nn::Activation::hardswish: return "hardswish";
    case nn::Activation::relu: return "relu";
    case nn::Activation::silu: return "silu";
  }
  return "?";
}

const char* fusion_name(ad::FusionMode f) { return f == ad::FusionMode::plain_sum ? "plain_sum" : "fast_normalized"; }

// Typed access to one JSON object that remembers which keys were read, so
// leftovers can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), "config: " + where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail_input("config: " + where(key) + " has the wrong type");
    }
  }

  template <typename T>
  void get_number(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    require(j_.at(key).is_number(), "config: " + where(key) + " must be a number");
    get(key, out);
  }

  template <typename T>
  void get_integer(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    require(j_.at(key).is_number_integer(), "config: " + where(key) + " must be an integer");
    get(key, out);
  }

  void get_bool(const std::string& key, bool& out) {
    if (!j_.contains(key)) return;
    require(j_.at(key).is_boolean(), "config: " + where(key) + " must be true or false");
    get(key, out);
  }

  std::optional<Reader> child(const std::string& key) {
    if (!j_.contains(key)) return std::nullopt;
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "top level" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail_input("config: unknown key " + where(k));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E parse_enum(const std::string& text, const std::vector<std::pair<const char*, E>>& names, const std::string& where) {
  for (const auto& [n, e] : names)
    if (text == n) return e;
  std::string all;
  for (const auto& [n, e] : names) all += std::string(all.empty() ? "" : ", ") + n;
  fail_input("config: " + where + " must be one of " + all + " (got \"" + text + "\")");
}

void read_model(Reader& r, nn::ModelConfig& m) {
  r.get_integer("input_size", m.input_size);
  r.get_number("bn_eps", m.bn_eps);
  r.get_number("bn_momentum", m.bn_momentum);
  if (auto b = r.child("backbone")) {
    if (b->has("stem")) {
      const json& s = b->raw("stem");
      require(s.is_array() && s.size() == 2, "config: " + b->where("stem") + " must list two convolutions");
      for (std::size_t i = 0; i < 2; ++i) {
        Reader c(s[i], b->where("stem") + "[" + std::to_string(i) + "]");
        c.get_integer("in", m.backbone.stem[i].in_channels);
        c.get_integer("out", m.backbone.stem[i].out_channels);
        c.get_integer("kernel", m.backbone.stem[i].kernel);
        c.get_integer("stride", m.backbone.stem[i].stride);
        c.finish();
      }
    }
    if (b->has("stages")) {
      const json& s = b->raw("stages");
      require(s.is_array() && s.size() == 3, "config: " + b->where("stages") + " must list three stages");
      for (std::size_t i = 0; i < 3; ++i) {
        Reader c(s[i], b->where("stages") + "[" + std::to_string(i) + "]");
        c.get_integer("channels", m.backbone.stages[i].channels);
        c.get_integer("repeats", m.backbone.stages[i].repeats);
        c.finish();
      }
    }
    b->get_integer("dw_kernel", m.backbone.dw_kernel);
    b->get_bool("attention", m.backbone.attention);
    b->get_integer("ca_reduction", m.backbone.ca_reduction);
    if (b->has("ca_activation")) {
      std::string a;
      b->get("ca_activation", a);
      m.backbone.ca_activation = parse_enum<nn::Activation>(
          a, {{"hardswish", nn::Activation::hardswish}, {"relu", nn::Activation::relu}, {"silu", nn::Activation::silu}},
          b->where("ca_activation"));
    }
    b->finish();
  }
  if (auto n = r.child("neck")) {
    n->get_integer("channels", m.neck.neck_channels);
    n->get_integer("repeats", m.neck.repeats);
    n->get_number("epsilon", m.neck.epsilon);
    n->get_bool("skip_edges", m.neck.skip_edges);
    if (n->has("fusion")) {
      std::string f;
      n->get("fusion", f);
      m.neck.fusion = parse_enum<ad::FusionMode>(
          f, {{"fast_normalized", ad::FusionMode::fast_normalized}, {"plain_sum", ad::FusionMode::plain_sum}},
          n->where("fusion"));
    }
    n->finish();
  }
  if (auto h = r.child("head")) {
    h->get_integer("num_classes", m.head.num_classes);
    if (h->has("anchors")) {
      const json& a = h->raw("anchors");
      const std::string w = h->where("anchors");
      require(a.is_array() && a.size() == 3, "config: " + w + " must hold three levels of three anchors");
      for (std::size_t l = 0; l < 3; ++l) {
        require(a[l].is_array() && a[l].size() == 3, "config: " + w + " must hold three levels of three anchors");
        for (std::size_t k = 0; k < 3; ++k) {
          const json& p = a[l][k];
          require(p.is_array() && p.size() == 2 && p[0].is_number() && p[1].is_number(),
                  "config: " + w + " entries must be [width, height]");
          m.head.anchors[l][k] = {p[0].get<double>(), p[1].get<double>()};
        }
      }
    }
    h->finish();
  }
}

}  // namespace

std::string row_name(const AblationRow& row) {
  return std::string(name_of(row.backbone)) + "/" + name_of(row.neck) + "/" + name_of(row.loss);
}

std::vector<AblationRow> all_rows() {
  std::vector<AblationRow> rows;
  for (auto b : {BackboneRow::shufflenetv2, BackboneRow::shufflecanet})
    for (auto n : {NeckRow::panet_sum, NeckRow::bifpn})
      for (auto l : {LossRow::ciou, LossRow::alpha_ciou}) rows.push_back({b, n, l});
  return rows;
}

json model_to_json(const nn::ModelConfig& m) {
  json stem = json::array(), stages = json::array(), anchors = json::array();
  for (const auto& c : m.backbone.stem)
    stem.push_back({{"in", c.in_channels}, {"out", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride}});
  for (const auto& s : m.backbone.stages) stages.push_back({{"channels", s.channels}, {"repeats", s.repeats}});
  for (const auto& level : m.head.anchors) {
    json l = json::array();
    for (const auto& a : level) l.push_back({a[0], a[1]});
    anchors.push_back(l);
  }
  return {
      {"input_size", m.input_size},
      {"bn_eps", m.bn_eps},
      {"bn_momentum", m.bn_momentum},
      {"backbone",
       {{"stem", stem},
        {"stages", stages},
        {"dw_kernel", m.backbone.dw_kernel},
        {"attention", m.backbone.attention},
        {"ca_reduction", m.backbone.ca_reduction},
        {"ca_activation", activation_name(m.backbone.ca_activation)}}},
      {"neck",
       {{"channels", m.neck.neck_channels},
        {"repeats", m.neck.repeats},
        {"fusion", fusion_name(m.neck.fusion)},
        {"epsilon", m.neck.epsilon},
        {"skip_edges", m.neck.skip_edges}}},
      {"head", {{"num_classes", m.head.num_classes}, {"anchors", anchors}}},
  };
}

json to_json(const RunConfig& c) {
  const auto& o = c.optim;
  const auto& g = c.gains;
  return {
      {"classes", c.class_names},
      {"ignore_labels", c.ignore_labels},
      {"data", {{"train", c.train_data}, {"val", c.val_data}}},
      {"seed", c.seed},
      {"model", model_to_json(c.model)},
      {"loss",
       {{"box", g.box},
        {"obj", g.obj},
        {"cls", g.cls},
        {"alpha", g.alpha},
        {"balance", g.balance},
        {"anchor_t", g.anchor_t}}},
      {"optim",
       {{"lr0", o.lr0},
        {"lrf", o.lrf},
        {"weight_decay", o.weight_decay},
        {"momentum", o.momentum},
        {"warmup_epochs", o.warmup_epochs},
        {"warmup_momentum", o.warmup_momentum},
        {"epochs", o.epochs},
        {"batch_size", o.batch_size}}},
      {"train", {{"mosaic", c.mosaic}, {"max_steps", c.max_steps}, {"eval_every", c.eval_every}}},
      {"eval", {{"conf", c.eval_conf}, {"iou", c.eval_iou}, {"operating_conf", c.operating_conf}}},
      {"detect", {{"conf", c.detect_conf}, {"iou", c.detect_iou}}},
  };
}

RunConfig from_json(const json& j, const std::filesystem::path& base) {
  RunConfig c;
  Reader r(j, "");
  r.get("classes", c.class_names);
  r.get("ignore_labels", c.ignore_labels);
  r.get_integer("seed", c.seed);
  if (auto d = r.child("data")) {
    d->get("train", c.train_data);
    d->get("val", c.val_data);
    d->finish();
  }
  auto resolve = [&](std::string& p) {
    if (!p.empty() && !base.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.train_data);
  resolve(c.val_data);

  bool explicit_attention = false, explicit_neck = false, explicit_alpha = false;
  if (auto m = r.child("model")) {
    if (m->has("backbone")) explicit_attention = j["model"]["backbone"].contains("attention");
    if (m->has("neck"))
      explicit_neck = j["model"]["neck"].contains("fusion") || j["model"]["neck"].contains("skip_edges");
    read_model(*m, c.model);
    m->finish();
  }
  if (auto l = r.child("loss")) {
    l->get_number("box", c.gains.box);
    l->get_number("obj", c.gains.obj);
    l->get_number("cls", c.gains.cls);
    l->get_number("alpha", c.gains.alpha);
    l->get("balance", c.gains.balance);
    l->get_number("anchor_t", c.gains.anchor_t);
    explicit_alpha = l->has("alpha");
    l->finish();
  }
  if (auto o = r.child("optim")) {
    o->get_number("lr0", c.optim.lr0);
    o->get_number("lrf", c.optim.lrf);
    o->get_number("weight_decay", c.optim.weight_decay);
    o->get_number("momentum", c.optim.momentum);
    o->get_number("warmup_epochs", c.optim.warmup_epochs);
    o->get_number("warmup_momentum", c.optim.warmup_momentum);
    o->get_integer("epochs", c.optim.epochs);
    o->get_integer("batch_size", c.optim.batch_size);
    o->finish();
  }
  if (auto t = r.child("train")) {
    t->get_bool("mosaic", c.mosaic);
    t->get_integer("max_steps", c.max_steps);
    t->get_integer("eval_every", c.eval_every);
    t->finish();
  }
  if (auto e = r.child("eval")) {
    e->get_number("conf", c.eval_conf);
    e->get_number("iou", c.eval_iou);
    e->get_number("operating_conf", c.operating_conf);
    e->finish();
  }
  if (auto d = r.child("detect")) {
    d->get_number("conf", c.detect_conf);
    d->get_number("iou", c.detect_iou);
    d->finish();
  }
  if (auto a = r.child("ablation")) {
    AblationRow row = ablation_row(c);
    const AblationRow before = row;
    if (a->has("backbone")) {
      std::string s;
      a->get("backbone", s);
      row.backbone = parse_enum<BackboneRow>(
          s, {{"shufflecanet", BackboneRow::shufflecanet}, {"shufflenetv2", BackboneRow::shufflenetv2}},
          a->where("backbone"));
      require(!explicit_attention || row.backbone == before.backbone,
              "config: ablation.backbone contradicts model.backbone.attention");
    }
    if (a->has("neck")) {
      std::string s;
      a->get("neck", s);
      row.neck = parse_enum<NeckRow>(s, {{"bifpn", NeckRow::bifpn}, {"panet-sum", NeckRow::panet_sum}}, a->where("neck"));
      require(!explicit_neck || row.neck == before.neck, "config: ablation.neck contradicts model.neck");
    }
    if (a->has("loss")) {
      std::string s;
      a->get("loss", s);
      row.loss = parse_enum<LossRow>(s, {{"alpha-ciou", LossRow::alpha_ciou}, {"ciou", LossRow::ciou}}, a->where("loss"));
      require(!explicit_alpha || row.loss == before.loss, "config: ablation.loss contradicts loss.alpha");
    }
    a->finish();
    // Only touch what the row changes, so an explicit alpha like 2.5 survives "alpha-ciou".
    if (row.backbone != before.backbone) c.model.backbone.attention = row.backbone == BackboneRow::shufflecanet;
    if (row.neck != before.neck) {
      const bool bifpn = row.neck == NeckRow::bifpn;
      c.model.neck.fusion = bifpn ? ad::FusionMode::fast_normalized : ad::FusionMode::plain_sum;
      c.model.neck.skip_edges = bifpn;
    }
    if (row.loss != before.loss) c.gains.alpha = row.loss == LossRow::ciou ? 1.0 : 3.0;
  }
  r.finish();
  c.validate();
  return c;
}

std::string dump(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = data::read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail_input(path.string() + ": not valid JSON (" + e.what() + ")");
  }
  try {
    return from_json(j, path.parent_path());
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

std::string model_hash(const nn::ModelConfig& model) {
  const std::string text = model_to_json(model).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace shcanet::cli
