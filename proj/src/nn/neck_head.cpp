#include "shcanet/nn/neck_head.hpp"

#include <cmath>

namespace shcanet::nn {

void BiFpnConfig::validate() const {
  require(neck_channels > 0, "neck_channels must be positive");
  require(repeats >= 1, "neck repeats must be >= 1");
  require(epsilon > 0, "fusion epsilon must be positive");
}

void HeadConfig::validate() const {
  require(num_classes >= 1, "num_classes must be >= 1");
  double prev_area = 0;
  for (std::size_t l = 0; l < 3; ++l) {
    require(strides[l] == 8 << l, "head strides must be 8, 16, 32");
    for (const auto& a : anchors[l]) {
      require(a[0] > 0 && a[1] > 0, "anchor sizes must be positive");
      require(a[0] * a[1] >= prev_area, "anchors must be sorted by area across levels");
      prev_area = a[0] * a[1];
    }
  }
}

namespace {

template <typename T>
FuseNode make_fuse(ParamStore<T>& store, const std::string& name, int inputs, int channels, ad::FusionMode mode) {
  FuseNode n;
  n.name = name;
  n.inputs = inputs;
  if (mode == ad::FusionMode::fast_normalized)
    n.weights = store.add(name + ".fusion", Shape{inputs}, ParamRole::fusion_weight, Init::constant(1.0));
  n.conv = make_cbs(store, name + ".cbs", channels, channels, 3, 1);
  return n;
}

}  // namespace

template <typename T>
BiFpn make_bifpn(ParamStore<T>& store, const std::string& name, std::array<int, 3> in_channels, const BiFpnConfig& cfg) {
  cfg.validate();
  BiFpn b;
  b.cfg = cfg;
  const int c = cfg.neck_channels;
  for (std::size_t i = 0; i < 3; ++i)
    b.project[i] = make_cbs(store, name + ".project" + std::to_string(i + 1), in_channels[i], c, 1, 1);
  for (int r = 0; r < cfg.repeats; ++r) {
    const std::string p = name + ".layer" + std::to_string(r);
    BiFpnLayer l;
    l.mid2 = make_fuse(store, p + ".mid2", 2, c, cfg.fusion);
    l.out1 = make_fuse(store, p + ".out1", 2, c, cfg.fusion);
    l.out2 = make_fuse(store, p + ".out2", cfg.skip_edges ? 3 : 2, c, cfg.fusion);
    l.out3 = make_fuse(store, p + ".out3", 2, c, cfg.fusion);
    l.down1 = make_cbs(store, p + ".down1", c, c, 3, 2);
    l.down2 = make_cbs(store, p + ".down2", c, c, 3, 2);
    b.layers.push_back(std::move(l));
  }
  return b;
}

std::vector<FusionGraphNode> describe(const BiFpn& neck) {
  std::vector<FusionGraphNode> g;
  std::string in1 = "in1", in2 = "in2", in3 = "in3";
  for (std::size_t r = 0; r < neck.layers.size(); ++r) {
    const std::string p = "layer" + std::to_string(r) + ".";
    g.push_back({p + "mid2", {in2, "up(" + in3 + ")"}});
    g.push_back({p + "out1", {in1, "up(" + p + "mid2)"}});
    std::vector<std::string> o2{p + "mid2", "down(" + p + "out1)"};
    if (neck.cfg.skip_edges) o2.insert(o2.begin(), in2);
    g.push_back({p + "out2", o2});
    g.push_back({p + "out3", {in3, "down(" + p + "out2)"}});
    in1 = p + "out1";
    in2 = p + "out2";
    in3 = p + "out3";
  }
  return g;
}

template <typename T>
Head make_head(ParamStore<T>& store, const std::string& name, int in_channels, const HeadConfig& cfg, int input_size) {
  cfg.validate();
  Head h;
  h.cfg = cfg;
  const int per = cfg.outputs_per_anchor();
  for (std::size_t l = 0; l < 3; ++l) {
    h.predict[l] = make_conv(store, name + ".predict" + std::to_string(l + 1), in_channels, cfg.channels(), 1, 1, 1, true);
    auto& bias = store.params()[*h.predict[l].bias].value;
    const double cells = std::pow(static_cast<double>(input_size) / cfg.strides[l], 2.0);
    const double obj_prior = std::log(8.0 / cells);
    const double cls_prior = std::log(0.6 / (cfg.num_classes - 0.99));
    for (int a = 0; a < 3; ++a) {
      bias[static_cast<std::size_t>(a * per + 4)] += static_cast<T>(obj_prior);
      for (int k = 0; k < cfg.num_classes; ++k) bias[static_cast<std::size_t>(a * per + 5 + k)] += static_cast<T>(cls_prior);
    }
  }
  return h;
}

template <typename T>
ad::Var<T> fuse(Context<T>& ctx, const FuseNode& node, const std::vector<ad::Var<T>>& inputs, const BiFpnConfig& cfg) {
  require(static_cast<int>(inputs.size()) == node.inputs, node.name + ": wrong number of fusion inputs");
  std::optional<ad::Var<T>> w;
  if (cfg.fusion == ad::FusionMode::fast_normalized) w = ctx.param(*node.weights);
  return forward(ctx, node.conv, ad::weighted_fusion(inputs, w, cfg.fusion, static_cast<T>(cfg.epsilon)));
}

template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const BiFpn& neck, const std::array<ad::Var<T>, 3>& levels) {
  for (int i = 0; i < 2; ++i) {
    const Shape& a = levels[static_cast<std::size_t>(i)].shape();
    const Shape& b = levels[static_cast<std::size_t>(i + 1)].shape();
    require(a.rank() == 4 && b.rank() == 4 && a.h() == 2 * b.h() && a.w() == 2 * b.w(),
            "neck levels must halve in size: " + a.str() + " then " + b.str());
  }
  std::array<ad::Var<T>, 3> c;
  for (std::size_t i = 0; i < 3; ++i) c[i] = forward(ctx, neck.project[i], levels[i]);
  for (const auto& l : neck.layers) {
    auto m2 = fuse<T>(ctx, l.mid2, {c[1], ad::upsample_nearest2x(c[2])}, neck.cfg);
    auto p1 = fuse<T>(ctx, l.out1, {c[0], ad::upsample_nearest2x(m2)}, neck.cfg);
    auto d1 = forward(ctx, l.down1, p1);
    auto p2 = neck.cfg.skip_edges ? fuse<T>(ctx, l.out2, {c[1], m2, d1}, neck.cfg) : fuse<T>(ctx, l.out2, {m2, d1}, neck.cfg);
    auto p3 = fuse<T>(ctx, l.out3, {c[2], forward(ctx, l.down2, p2)}, neck.cfg);
    c = {p1, p2, p3};
  }
  return c;
}

template <typename T>
std::array<ad::Var<T>, 3> forward(Context<T>& ctx, const Head& head, const std::array<ad::Var<T>, 3>& levels) {
  std::array<ad::Var<T>, 3> out;
  for (std::size_t i = 0; i < 3; ++i) out[i] = forward(ctx, head.predict[i], levels[i]);
  return out;
}

#define SHCANET_INSTANTIATE(T)                                                                                     \
  template BiFpn make_bifpn(ParamStore<T>&, const std::string&, std::array<int, 3>, const BiFpnConfig&);           \
  template Head make_head(ParamStore<T>&, const std::string&, int, const HeadConfig&, int);                        \
  template ad::Var<T> fuse(Context<T>&, const FuseNode&, const std::vector<ad::Var<T>>&, const BiFpnConfig&);      \
  template std::array<ad::Var<T>, 3> forward(Context<T>&, const BiFpn&, const std::array<ad::Var<T>, 3>&);         \
  template std::array<ad::Var<T>, 3> forward(Context<T>&, const Head&, const std::array<ad::Var<T>, 3>&);

SHCANET_INSTANTIATE(float)
SHCANET_INSTANTIATE(double)

#undef SHCANET_INSTANTIATE

}  // namespace shcanet::nn
