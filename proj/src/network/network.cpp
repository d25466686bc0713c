#include "godp/network.hpp"

#include <cmath>
#include <sstream>

#include "godp/errors.hpp"
#include "godp/rng.hpp"

namespace godp {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kGodp:
      return "godp";
    case Variant::kDeconvNet:
      return "deconvnet";
    case Variant::kHgn:
      return "hgn";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  if (name == "godp") return Variant::kGodp;
  if (name == "deconvnet") return Variant::kDeconvNet;
  if (name == "hgn") return Variant::kHgn;
  throw ConfigError("unknown network variant '" + std::string(name) + "' (expected godp, deconvnet or hgn)");
}

int NetworkSpec::group_width(int i) const {
  static constexpr int kMultiplier[5] = {1, 2, 4, 8, 8};
  return std::min(base_width * kMultiplier[i], width_cap);
}

void NetworkSpec::validate() const {
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("input_size must be a positive multiple of 32, got " + std::to_string(input_size));
  }
  if (landmarks < 1) throw ConfigError("landmark count L must be >= 1");
  if (subspaces < 1) throw ConfigError("subspace count K must be >= 1");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (width_cap < 1) throw ConfigError("width_cap must be >= 1");
  if (converter_width < 0) throw ConfigError("converter_width must be >= 0");
}

template <typename T>
const Group& Network<T>::group(std::string_view name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return g;
  }
  throw ConfigError("network has no group '" + std::string(name) + "'");
}

namespace {

template <typename T>
class Builder {
 public:
  Builder(ParamSet<T>& params, std::uint64_t seed) : params_(params), rng_(make_rng(seed, "init")) {}

  ConvUnit unit(const std::string& group, const std::string& name, bool transposed, int in, int out, int kernel,
                bool bn_relu) {
    ConvUnit u;
    u.name = name;
    u.transposed = transposed;
    u.in_channels = in;
    u.out_channels = out;
    u.kernel = kernel;
    u.pad = kernel / 2;
    u.batch_norm = bn_relu;
    u.relu = bn_relu;
    const std::string prefix = group + "." + name;
    const Shape ws = transposed ? Shape{in, out, kernel, kernel} : Shape{out, in, kernel, kernel};
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
    std::vector<T> w(ws.numel());
    for (auto& v : w) v = static_cast<T>(std_dev * normal01(rng_));
    u.weight = params_.add(prefix + ".weight", Tensor<T>::from(ws, std::move(w), true), true);
    const Shape cs{1, out, 1, 1};
    if (bn_relu) {
      u.bn_scale = params_.add(prefix + ".bn.scale", Tensor<T>::full(cs, T(1), true), true);
      u.bn_shift = params_.add(prefix + ".bn.shift", Tensor<T>::zeros(cs, true), true);
      u.bn_mean = params_.add(prefix + ".bn.running_mean", Tensor<T>::zeros(cs), false);
      u.bn_var = params_.add(prefix + ".bn.running_var", Tensor<T>::full(cs, T(1)), false);
    } else {
      u.bias = params_.add(prefix + ".bias", Tensor<T>::zeros(cs, true), true);
    }
    return u;
  }

 private:
  ParamSet<T>& params_;
  Rng rng_;
};

std::string res(int input_size, int divisor) {
  const int r = input_size / divisor;
  return std::to_string(r) + "x" + std::to_string(r);
}

}  // namespace

template <typename T>
Network<T> build_network(const NetworkSpec& spec) {
  spec.validate();
  if (spec.precision != precision_of<T>()) {
    throw ConfigError("network spec asks for " + std::string(precision_name(spec.precision)) +
                      " but was built at " + std::string(precision_name(precision_of<T>())));
  }
  Network<T> net;
  net.spec_ = spec;
  Builder<T> b(net.params_, spec.seed);
  const int S = spec.input_size;
  const int C[6] = {1, spec.group_width(0), spec.group_width(1), spec.group_width(2), spec.group_width(3),
                    spec.group_width(4)};
  const bool hgn = spec.variant == Variant::kHgn;
  const bool godp = spec.variant == Variant::kGodp;

  for (int i = 1; i <= 5; ++i) {
    const std::string g = "G" + std::to_string(i);
    Group grp{g, {}, ""};
    grp.units.push_back(b.unit(g, "conv1", false, C[i - 1], C[i], 3, true));
    grp.units.push_back(b.unit(g, "conv2", false, C[i], C[i], 3, true));
    grp.note = "encoder conv3x3 x2 @" + res(S, 1 << (i - 1)) + ", maxpool -> " + res(S, 1 << i);
    net.groups_.push_back(std::move(grp));
  }
  // Decoder G6..G9 mirror G5..G2; HGN concatenates the mirrored encoder
  // group's pre-pool features after unpooling in G7, G8, G9.
  for (int i = 6; i <= 9; ++i) {
    const int mirror = 11 - i;  // G6<->G5, G7<->G4, G8<->G3, G9<->G2
    const std::string g = "G" + std::to_string(i);
    const int in = C[mirror];
    const int link = (hgn && i >= 7) ? C[mirror] : 0;
    Group grp{g, {}, ""};
    grp.units.push_back(b.unit(g, "deconv1", true, in + link, C[mirror], 3, true));
    grp.units.push_back(b.unit(g, "deconv2", true, C[mirror], C[mirror - 1], 3, true));
    grp.note = "decoder unpool(G" + std::to_string(mirror) + " switches) -> " + res(S, 1 << (mirror - 1)) +
               (link ? ", concat G" + std::to_string(mirror) + " pre-pool" : std::string()) + ", deconv3x3 x2";
    net.groups_.push_back(std::move(grp));
  }

  const int sc = spec.score_channels();
  if (!godp) {
    Group g10{"G10", {}, "decoder deconv3x3 x2 @" + res(S, 2)};
    g10.units.push_back(b.unit("G10", "deconv1", true, C[1], C[1], 3, true));
    g10.units.push_back(b.unit("G10", "deconv2", true, C[1], C[1], 3, true));
    net.groups_.push_back(std::move(g10));
    Group head{"OUT", {}, "conv1x1 onto " + std::to_string(sc) + " score channels @" + res(S, 2)};
    head.units.push_back(b.unit("OUT", "conv", false, C[1], sc, 1, false));
    net.groups_.push_back(std::move(head));
    return net;
  }

  const int cw = spec.effective_converter_width();
  auto converter3 = [&](const std::string& g, int info, const std::string& note) {
    Group grp{g, {}, note};
    grp.units.push_back(b.unit(g, "conv1", false, info + sc, cw, 3, true));
    grp.units.push_back(b.unit(g, "conv2", false, cw, cw, 3, true));
    grp.units.push_back(b.unit(g, "conv3", false, cw, sc, 1, false));
    return grp;
  };
  auto converter1 = [&](const std::string& g, int info, const std::string& note) {
    Group grp{g, {}, note};
    grp.units.push_back(b.unit(g, "conv", false, info + sc, sc, 1, false));
    return grp;
  };
  {
    Group g14{"G14", {}, "psi0 = conv1x1(G7 out ++ G4 pre-pool) @" + res(S, 8) + " [SL]"};
    g14.units.push_back(b.unit("G14", "conv", false, C[3] + C[4], sc, 1, false));
    net.groups_.push_back(std::move(g14));
  }
  net.groups_.push_back(converter3("G12", C[2], "psi1 = U1(psi0) + G12(G2 out ++ U1(psi0)) @" + res(S, 4) + " [P-DSL1]"));
  net.groups_.push_back(converter1("G15", C[2], "psi2 = psi1 + G15(G8 out ++ psi1) @" + res(S, 4) + " [R-DSL1]"));
  net.groups_.push_back(converter3("G13", C[1], "psi3 = U2(psi2) + G13(G1 out ++ U2(psi2)) @" + res(S, 2) + " [P-DSL2]"));
  net.groups_.push_back(converter1("G16", C[1], "psi4 = psi3 + G16(G9 out ++ psi3) @" + res(S, 2) + " [R-DSL2]"));
  return net;
}

template <typename T>
Tensor<T> run_group(const Tensor<T>& input, const Group& group, ParamSet<T>& params, const ForwardOptions& options) {
  Tensor<T> h = input;
  const BatchNormOptions bn{options.mode == ForwardMode::kTrain ? BatchNormMode::kTrain : BatchNormMode::kEval,
                            options.bn_momentum, options.bn_epsilon};
  for (const ConvUnit& u : group.units) {
    const Tensor<T> bias = u.bias == SIZE_MAX ? Tensor<T>() : params.at(u.bias);
    h = u.transposed ? deconv2d(h, params.at(u.weight), bias, 1, u.pad)
                     : conv2d(h, params.at(u.weight), bias, 1, u.pad);
    if (u.batch_norm) {
      h = batchnorm(h, params.at(u.bn_scale), params.at(u.bn_shift), params.at(u.bn_mean), params.at(u.bn_var), bn);
    }
    if (u.relu) h = relu(h);
  }
  return h;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> decision_update(const Tensor<T>& psi_prev, const Tensor<T>& info_features,
                                                const Group& converter, ParamSet<T>& params,
                                                const ForwardOptions& options) {
  const Shape ps = psi_prev.shape();
  const Shape fs = info_features.shape();
  if (ps.n != fs.n || ps.h != fs.h || ps.w != fs.w) {
    throw DimensionError("decision_update: score stack " + ps.str() + " and features " + fs.str() +
                         " differ in resolution");
  }
  Tensor<T> delta = run_group(concat_channels<T>({info_features, psi_prev}), converter, params, options);
  if (!(delta.shape() == ps)) {
    throw DimensionError("decision_update: converter " + converter.name + " produced " + delta.shape().str() +
                         ", expected " + ps.str());
  }
  return {add(psi_prev, delta), delta};
}

template <typename T>
Tensor<T> merge_pose_subspaces(const Tensor<T>& probabilities, int subspaces, int landmarks) {
  const Shape ps = probabilities.shape();
  if (ps.c != subspaces * landmarks + 1) {
    throw DimensionError("merge_pose_subspaces: " + std::to_string(ps.c) + " channels, expected K*L+1 = " +
                         std::to_string(subspaces * landmarks + 1));
  }
  const Shape os{ps.n, landmarks, ps.h, ps.w};
  const std::size_t plane = ps.plane();
  std::vector<T> out(os.numel(), T(0));
  const auto p = probabilities.data();
  for (int n = 0; n < ps.n; ++n) {
    for (int k = 0; k < subspaces; ++k) {
      for (int l = 0; l < landmarks; ++l) {
        const T* src = p.data() + ps.index(n, k * landmarks + l, 0, 0);
        T* dst = out.data() + os.index(n, l, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
      }
    }
  }
  auto p_impl = probabilities.impl_ptr();
  return autograd::make_result<T>(
      os, std::move(out), {probabilities},
      [p_impl, ps, os, subspaces, landmarks, plane](detail::TensorImpl<T>& self) {
        auto& dp = p_impl->ensure_grad();
        for (int n = 0; n < ps.n; ++n) {
          for (int k = 0; k < subspaces; ++k) {
            for (int l = 0; l < landmarks; ++l) {
              T* dst = dp.data() + ps.index(n, k * landmarks + l, 0, 0);
              const T* src = self.grad.data() + os.index(n, l, 0, 0);
              for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
            }
          }
        }
      },
      "merge_pose_subspaces");
}

template <typename T>
ForwardRecord<T> forward(Network<T>& net, const Tensor<T>& images, const ForwardOptions& options) {
  const NetworkSpec& spec = net.spec_;
  const Shape is = images.shape();
  if (is.c != 1 || is.h != spec.input_size || is.w != spec.input_size || is.n < 1) {
    throw DimensionError("forward: expected images (n,1," + std::to_string(spec.input_size) + "," +
                         std::to_string(spec.input_size) + "), got " + is.str());
  }
  auto& P = net.params_;
  const auto& G = net.groups_;
  // G1..G5
  std::array<Tensor<T>, 5> pre, post;
  std::array<SwitchMap, 5> sw;
  Tensor<T> h = images;
  for (int i = 0; i < 5; ++i) {
    pre[i] = run_group(h, G[i], P, options);
    auto pooled = maxpool2(pre[i]);
    post[i] = pooled.value;
    sw[i] = std::move(pooled.switches);
    h = post[i];
  }
  const bool hgn = spec.variant == Variant::kHgn;
  // G6..G9; decoder group i unpools with the switches of encoder group 11-i.
  std::array<Tensor<T>, 4> dec;
  Tensor<T> d = post[4];
  for (int i = 6; i <= 9; ++i) {
    const int mirror = 11 - i;
    Tensor<T> u = unpool2(d, sw[mirror - 1]);
    if (hgn && i >= 7) u = concat_channels<T>({u, pre[mirror - 1]});
    d = run_group(u, G[i - 1], P, options);
    dec[i - 6] = d;
  }

  ForwardRecord<T> rec;
  if (spec.variant != Variant::kGodp) {
    Tensor<T> g10 = run_group(dec[3], G[9], P, options);
    Tensor<T> logits = run_group(g10, G[10], P, options);
    rec.supervision.push_back(logits);
    rec.merged = merge_pose_subspaces(channel_softmax(logits), spec.subspaces, spec.landmarks);
    return rec;
  }

  const Group& g14 = net.group("G14");
  const Group& g12 = net.group("G12");
  const Group& g15 = net.group("G15");
  const Group& g13 = net.group("G13");
  const Group& g16 = net.group("G16");

  // G8 before unpooling is G7's output; the G4 hyperlink joins it there.
  Tensor<T> psi0 = run_group(concat_channels<T>({dec[1], pre[3]}), g14, P, options);
  rec.supervision.push_back(psi0);

  auto [psi1, d1] = decision_update(bilinear_upsample2(psi0), post[1], g12, P, options);
  rec.supervision.push_back(psi1);
  rec.deltas.push_back(d1);

  Tensor<T> psi2 = psi1;
  if (options.refinement_active) {
    auto [next, d2] = decision_update(psi1, dec[2], g15, P, options);
    psi2 = next;
    rec.deltas.push_back(d2);
  } else {
    rec.deltas.emplace_back();
  }
  rec.supervision.push_back(psi2);

  auto [psi3, d3] = decision_update(bilinear_upsample2(psi2), post[0], g13, P, options);
  rec.supervision.push_back(psi3);
  rec.deltas.push_back(d3);

  Tensor<T> psi4 = psi3;
  if (options.refinement_active) {
    auto [next, d4] = decision_update(psi3, dec[3], g16, P, options);
    psi4 = next;
    rec.deltas.push_back(d4);
  } else {
    rec.deltas.emplace_back();
  }
  rec.supervision.push_back(psi4);

  const int sc = spec.score_channels();
  for (const auto& s : rec.supervision) {
    if (s.shape().c != sc) throw DimensionError("score stack lost the K*L+1 channel invariant");
  }
  rec.merged = merge_pose_subspaces(channel_softmax(psi4), spec.subspaces, spec.landmarks);
  return rec;
}

template <typename T>
std::string describe(const Network<T>& net) {
  const NetworkSpec& s = net.spec();
  std::ostringstream out;
  out << "network " << variant_name(s.variant) << "  L=" << s.landmarks << " K=" << s.subspaces
      << " input=" << s.input_size << "x" << s.input_size << " output=" << s.output_size() << "x"
      << s.output_size() << " score_channels=" << s.score_channels() << " base_width=" << s.base_width
      << " width_cap=" << s.width_cap << " precision=" << precision_name(s.precision) << "\n";
  for (const Group& g : net.groups()) {
    out << "  " << g.name << "  " << g.note << "\n";
    for (const ConvUnit& u : g.units) {
      out << "      " << u.name << "  " << (u.transposed ? "deconv" : "conv") << u.kernel << "x" << u.kernel << "  "
          << u.in_channels << " -> " << u.out_channels << (u.batch_norm ? "  +bn" : "") << (u.relu ? " +relu" : "")
          << "\n";
    }
  }
  if (s.variant == Variant::kGodp) {
    out << "  hyperlink G4 -> G8 (pre-unpool)\n";
  } else if (s.variant == Variant::kHgn) {
    out << "  hyperlinks G4 -> G7, G3 -> G8, G2 -> G9\n";
  }
  out << "supervision_points " << net.supervision_count() << "\n";
  out << "decision_updates " << net.decision_updates() << "\n";
  out << "parameters " << net.params().learnable_count() << "\n";
  return out.str();
}

template <typename T>
std::string topology_signature(const Network<T>& net) {
  std::ostringstream out;
  const NetworkSpec& s = net.spec();
  out << variant_name(s.variant) << ";" << s.landmarks << ";" << s.subspaces << ";" << s.input_size;
  for (const Group& g : net.groups()) {
    out << "|" << g.name;
    for (const ConvUnit& u : g.units) {
      out << ":" << u.name << "," << u.transposed << "," << u.in_channels << "," << u.out_channels << ","
          << u.kernel << "," << u.batch_norm;
    }
  }
  return out.str();
}

#define GODP_INSTANTIATE_NETWORK(T)                                                                           \
  template class Network<T>;                                                                                  \
  template Network<T> build_network<T>(const NetworkSpec&);                                                   \
  template ForwardRecord<T> forward(Network<T>&, const Tensor<T>&, const ForwardOptions&);                    \
  template std::pair<Tensor<T>, Tensor<T>> decision_update(const Tensor<T>&, const Tensor<T>&, const Group&,  \
                                                           ParamSet<T>&, const ForwardOptions&);              \
  template Tensor<T> run_group(const Tensor<T>&, const Group&, ParamSet<T>&, const ForwardOptions&);          \
  template Tensor<T> merge_pose_subspaces(const Tensor<T>&, int, int);                                        \
  template std::string describe(const Network<T>&);                                                           \
  template std::string topology_signature(const Network<T>&);

GODP_INSTANTIATE_NETWORK(float)
GODP_INSTANTIATE_NETWORK(double)

#undef GODP_INSTANTIATE_NETWORK

}  // namespace godp
