#include "rsnet/layers.hpp"

#include <cmath>

namespace rsnet {

std::int64_t group_norm_groups(std::int64_t channels) { return std::min<std::int64_t>(16, channels); }

namespace {

template <typename T>
Var<T> activate(Var<T> x, Act act) {
  switch (act) {
    case Act::SiLU:
      return ops::silu(x);
    case Act::ReLU6:
      return ops::relu6(x);
    case Act::None:
      break;
  }
  return x;
}

Shape spatial_out(const Shape& in, std::int64_t c, int kernel, const ops::ConvOptions& o) {
  return Shape{in.n, c, ops::conv_out_size(in.h, kernel, o), ops::conv_out_size(in.w, kernel, o)};
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvUnit

template <typename T>
ConvUnit<T>::ConvUnit(std::string name, const ConvSpec& spec, ParameterStore<T>& store, Rng& rng)
    : name_(std::move(name)), spec_(spec) {
  if (spec.cin <= 0 || spec.cout <= 0) throw UsageError(name_ + ": channel counts must be positive");
  if (spec.groups < 1 || spec.cin % spec.groups != 0 || spec.cout % spec.groups != 0) {
    throw UsageError(name_ + ": groups " + std::to_string(spec.groups) + " must divide channels");
  }
  const std::int64_t fan_in = spec.cin / spec.groups * spec.kernel * spec.kernel;
  Tensor<T> w(Shape{spec.cout, spec.cin / spec.groups, spec.kernel, spec.kernel});
  Rng local = rng.split(name_);
  local.fill_normal(w.data(), 0.0, spec.init_gain / std::sqrt(static_cast<double>(fan_in)));
  weight = &store.create(name_ + ".weight", std::move(w));
  if (spec.bias) {
    bias = &store.create(name_ + ".bias", Tensor<T>(Shape{1, spec.cout, 1, 1}, static_cast<T>(spec.bias_init)), true,
                         false);
  }
  const Shape vec{1, spec.cout, 1, 1};
  if (spec.norm == Norm::Group && spec.cout % group_norm_groups(spec.cout) != 0) {
    throw UsageError(name_ + ": " + std::to_string(spec.cout) + " channels not divisible into group-norm groups");
  }
  if (spec.norm != Norm::None) {
    const std::string n = spec.norm == Norm::Batch ? ".bn" : ".gn";
    gamma = &store.create(name_ + n + ".gamma", Tensor<T>(vec, T(1)), true, false);
    beta = &store.create(name_ + n + ".beta", Tensor<T>(vec, T(0)), true, false);
    if (spec.norm == Norm::Batch) {
      running_mean = &store.create(name_ + n + ".running_mean", Tensor<T>(vec, T(0)), false);
      running_var = &store.create(name_ + n + ".running_var", Tensor<T>(vec, T(1)), false);
    }
  }
}

template <typename T>
Var<T> ConvUnit<T>::forward(const Context<T>& ctx, Var<T> x) const {
  ScopeGuard<T> scope(ctx.tape, name_);
  Tape<T>& t = ctx.tape;
  const ops::ConvOptions o{spec_.stride, spec_.pad(), spec_.dilation, spec_.groups};
  std::optional<Var<T>> b;
  if (bias) b = t.param(*bias);
  Var<T> y = ops::conv2d(x, t.param(*weight), b, o);
  if (spec_.norm == Norm::Batch) {
    y = ops::batch_norm(y, t.param(*gamma), t.param(*beta), running_mean->value, running_var->value, ctx.mode,
                        ops::BatchNormOptions{kBatchNormMomentum, 1e-5});
  } else if (spec_.norm == Norm::Group) {
    y = ops::group_norm(y, static_cast<int>(group_norm_groups(spec_.cout)), t.param(*gamma), t.param(*beta));
  }
  return activate(y, spec_.act);
}

template <typename T>
Shape ConvUnit<T>::out_shape(const Shape& in) const {
  return spatial_out(in, spec_.cout, spec_.kernel, ops::ConvOptions{spec_.stride, spec_.pad(), spec_.dilation, spec_.groups});
}

template <typename T>
std::int64_t ConvUnit<T>::macs(const Shape& in) const {
  const Shape out = out_shape(in);
  std::int64_t m = out.c * (spec_.cin / spec_.groups) * spec_.kernel * spec_.kernel * out.plane();
  if (spec_.norm != Norm::None) m += out.c * out.plane();
  return m;
}

template <typename T>
std::int64_t ConvUnit<T>::analytic_params() const {
  std::int64_t p = spec_.cout * (spec_.cin / spec_.groups) * spec_.kernel * spec_.kernel;
  if (spec_.bias) p += spec_.cout;
  if (spec_.norm != Norm::None) p += 2 * spec_.cout;
  return p;
}

template <typename T>
std::vector<std::string> ConvUnit<T>::param_names() const {
  std::vector<std::string> names;
  for (const Parameter<T>* p : {weight, bias, gamma, beta}) {
    if (p) names.push_back(p->name);
  }
  return names;
}

template <typename T>
Shape ConvUnit<T>::count(const Shape& in, CountReport& report) const {
  const Shape out = out_shape(in);
  std::string kind = spec_.groups > 1 && spec_.groups == spec_.cin ? "dwconv" : "conv";
  kind += std::to_string(spec_.kernel) + "x" + std::to_string(spec_.kernel);
  report.rows.push_back(CountRow{name_, kind, analytic_params(), macs(in), Shape{1, out.c, out.h, out.w}, param_names()});
  return out;
}

// ---------------------------------------------------------------------------
// WaveletPoolLayer

template <typename T>
WaveletPoolLayer<T>::WaveletPoolLayer(std::string name, std::int64_t cin, std::int64_t cout,
                                      WaveletAggregate aggregate, ParameterStore<T>& store, Rng& rng)
    : name_(std::move(name)), cin_(cin), cout_(cout), aggregate_(aggregate) {
  const std::int64_t mixed = aggregate == WaveletAggregate::Stack ? 4 * cin : cin;
  Tensor<T> w(Shape{cout, mixed, 1, 1});
  Rng local = rng.split(name_);
  local.fill_normal(w.data(), 0.0, 1.0 / std::sqrt(static_cast<double>(mixed)));
  pointwise = &store.create(name_ + ".pointwise.weight", std::move(w));
  bias = &store.create(name_ + ".pointwise.bias", Tensor<T>(Shape{1, cout, 1, 1}), true, false);
}

template <typename T>
Var<T> WaveletPoolLayer<T>::forward(const Context<T>& ctx, Var<T> x) const {
  ScopeGuard<T> scope(ctx.tape, name_);
  return wavelet_pool(x, ctx.tape.param(*pointwise), std::optional<Var<T>>(ctx.tape.param(*bias)), aggregate_);
}

template <typename T>
std::int64_t WaveletPoolLayer<T>::analytic_params() const {
  return (aggregate_ == WaveletAggregate::Stack ? 4 * cin_ : cin_) * cout_ + cout_;
}

template <typename T>
Shape WaveletPoolLayer<T>::count(const Shape& in, CountReport& report) const {
  const Shape out{1, cout_, (in.h + 1) / 2, (in.w + 1) / 2};
  const std::int64_t mixed = aggregate_ == WaveletAggregate::Stack ? 4 * cin_ : cin_;
  // Fixed filters: four subbands of four taps per input channel and output cell.
  const std::int64_t analysis = 4 * cin_ * out.plane() * 4;
  report.rows.push_back(CountRow{name_, "wavelet_pool", analytic_params(), analysis + mixed * cout_ * out.plane(), out,
                                 {pointwise->name, bias->name}});
  return out;
}

// ---------------------------------------------------------------------------
// C2fLite

template <typename T>
C2fLite<T>::C2fLite(std::string name, std::int64_t cin, std::int64_t cout, bool shortcut, ParameterStore<T>& store,
                    Rng& rng)
    : name_(std::move(name)), hidden_(cout / 2), shortcut_(shortcut) {
  if (cout % 2 != 0) throw UsageError(name_ + ": c2f-lite output width must be even");
  const auto cba = [](std::int64_t ci, std::int64_t co, int k) {
    ConvSpec s;
    s.cin = ci;
    s.cout = co;
    s.kernel = k;
    s.norm = Norm::Batch;
    s.act = Act::SiLU;
    return s;
  };
  cv1_ = ConvUnit<T>(name_ + ".cv1", cba(cin, 2 * hidden_, 1), store, rng);
  m1_ = ConvUnit<T>(name_ + ".m.cv1", cba(hidden_, hidden_, 3), store, rng);
  m2_ = ConvUnit<T>(name_ + ".m.cv2", cba(hidden_, hidden_, 3), store, rng);
  cv2_ = ConvUnit<T>(name_ + ".cv2", cba(3 * hidden_, cout, 1), store, rng);
}

template <typename T>
Var<T> C2fLite<T>::forward(const Context<T>& ctx, Var<T> x) const {
  Var<T> y = cv1_.forward(ctx, x);
  Var<T> a = ops::slice_channels(y, 0, hidden_);
  Var<T> b = ops::slice_channels(y, hidden_, hidden_);
  Var<T> m = m2_.forward(ctx, m1_.forward(ctx, b));
  if (shortcut_) m = ops::add(b, m);
  return cv2_.forward(ctx, ops::concat_channels<T>({a, b, m}));
}

template <typename T>
std::int64_t C2fLite<T>::analytic_params() const {
  return cv1_.analytic_params() + m1_.analytic_params() + m2_.analytic_params() + cv2_.analytic_params();
}

template <typename T>
Shape C2fLite<T>::count(const Shape& in, CountReport& report) const {
  Shape s = cv1_.count(in, report);
  Shape half{s.n, hidden_, s.h, s.w};
  m2_.count(m1_.count(half, report), report);
  return cv2_.count(Shape{s.n, 3 * hidden_, s.h, s.w}, report);
}

// ---------------------------------------------------------------------------
// ContextGuided

template <typename T>
ContextGuided<T>::ContextGuided(std::string name, const ContextGuidedConfig& cfg, ParameterStore<T>& store, Rng& rng)
    : name_(std::move(name)), cfg_(cfg) {
  if (cfg.c_out % 2 != 0) throw UsageError(name_ + ": context-guided output width must be even");
  if (cfg.dilation < 1) throw UsageError(name_ + ": dilation must be >= 1");
  if (cfg.reduction < 1) throw UsageError(name_ + ": reduction must be >= 1");
  const std::int64_t n = cfg.c_out / 2;
  if (cfg.c_in != cfg.c_out) {
    ConvSpec p;
    p.cin = cfg.c_in;
    p.cout = cfg.c_out;
    p.norm = Norm::Batch;
    p.init_gain = 1.0;
    proj_ = ConvUnit<T>(name_ + ".shortcut", p, store, rng);
  }
  ConvSpec r;
  r.cin = cfg.c_in;
  r.cout = n;
  r.norm = Norm::Batch;
  r.act = Act::SiLU;
  reduce_ = ConvUnit<T>(name_ + ".reduce", r, store, rng);

  ConvSpec dw;
  dw.cin = n;
  dw.cout = n;
  dw.kernel = 3;
  dw.groups = static_cast<int>(n);
  dw.init_gain = 1.0;
  local_ = ConvUnit<T>(name_ + ".local", dw, store, rng);
  dw.dilation = cfg.dilation;
  surround_ = ConvUnit<T>(name_ + ".surround", dw, store, rng);

  const Shape vec{1, cfg.c_out, 1, 1};
  joint_gamma_ = &store.create(name_ + ".joint.bn.gamma", Tensor<T>(vec, T(1)), true, false);
  joint_beta_ = &store.create(name_ + ".joint.bn.beta", Tensor<T>(vec, T(0)), true, false);
  joint_mean_ = &store.create(name_ + ".joint.bn.running_mean", Tensor<T>(vec, T(0)), false);
  joint_var_ = &store.create(name_ + ".joint.bn.running_var", Tensor<T>(vec, T(1)), false);

  ConvSpec f1;
  f1.cin = cfg.c_out;
  f1.cout = std::max<std::int64_t>(1, cfg.c_out / cfg.reduction);
  f1.bias = true;
  f1.act = Act::SiLU;
  fc1_ = ConvUnit<T>(name_ + ".gate.fc1", f1, store, rng);
  ConvSpec f2;
  f2.cin = f1.cout;
  f2.cout = cfg.c_out;
  f2.bias = true;
  f2.init_gain = 1.0;
  fc2_ = ConvUnit<T>(name_ + ".gate.fc2", f2, store, rng);
}

template <typename T>
Var<T> ContextGuided<T>::forward(const Context<T>& ctx, Var<T> x) const {
  Tape<T>& t = ctx.tape;
  Var<T> shortcut = proj_ ? proj_->forward(ctx, x) : x;
  Var<T> x1 = reduce_.forward(ctx, x);
  Var<T> local = local_.forward(ctx, x1);
  Var<T> surround = surround_.forward(ctx, x1);
  ScopeGuard<T> scope(t, name_);
  Var<T> joint = ops::concat_channels<T>({local, surround});
  joint = ops::batch_norm(joint, t.param(*joint_gamma_), t.param(*joint_beta_), joint_mean_->value, joint_var_->value,
                          ctx.mode, ops::BatchNormOptions{kBatchNormMomentum, 1e-5});
  joint = ops::silu(joint);
  Var<T> gate = ops::sigmoid(fc2_.forward(ctx, fc1_.forward(ctx, ops::global_avg_pool(joint))));
  return ops::add(shortcut, ops::mul_channel(joint, gate));
}

template <typename T>
std::int64_t ContextGuided<T>::analytic_params() const {
  std::int64_t p = reduce_.analytic_params() + local_.analytic_params() + surround_.analytic_params() +
                   2 * cfg_.c_out + fc1_.analytic_params() + fc2_.analytic_params();
  if (proj_) p += proj_->analytic_params();
  return p;
}

template <typename T>
Shape ContextGuided<T>::count(const Shape& in, CountReport& report) const {
  if (proj_) proj_->count(in, report);
  const Shape x1 = reduce_.count(in, report);
  local_.count(x1, report);
  surround_.count(x1, report);
  const Shape joint{1, cfg_.c_out, x1.h, x1.w};
  report.rows.push_back(CountRow{name_ + ".joint", "bn", 2 * cfg_.c_out, joint.numel(), joint,
                                 {joint_gamma_->name, joint_beta_->name}});
  const Shape pooled{1, cfg_.c_out, 1, 1};
  fc2_.count(fc1_.count(pooled, report), report);
  return joint;
}

// ---------------------------------------------------------------------------
// Star

template <typename T>
Star<T>::Star(std::string name, const StarConfig& cfg, ParameterStore<T>& store, Rng& rng)
    : name_(std::move(name)), cfg_(cfg) {
  if (cfg.mlp_ratio < 1) throw UsageError(name_ + ": mlp_ratio must be >= 1");
  if (cfg.dropout_p < 0.0 || cfg.dropout_p >= 1.0) throw UsageError(name_ + ": dropout must lie in [0, 1)");
  const std::int64_t c = cfg.channels;
  const std::int64_t wide = c * cfg.mlp_ratio;
  ConvSpec dw;
  dw.cin = c;
  dw.cout = c;
  dw.kernel = 7;
  dw.groups = static_cast<int>(c);
  dw.init_gain = 1.0;
  dw.norm = Norm::Batch;
  dw1_ = ConvUnit<T>(name_ + ".dw1", dw, store, rng);
  ConvSpec f;
  f.cin = c;
  f.cout = wide;
  f.bias = true;
  f.init_gain = 1.0;
  f1_ = ConvUnit<T>(name_ + ".f1", f, store, rng);
  f2_ = ConvUnit<T>(name_ + ".f2", f, store, rng);
  ConvSpec g;
  g.cin = wide;
  g.cout = c;
  g.init_gain = 1.0;
  g_ = ConvUnit<T>(name_ + ".g", g, store, rng);
  dw.norm = Norm::None;
  dw2_ = ConvUnit<T>(name_ + ".dw2", dw, store, rng);
}

template <typename T>
Var<T> Star<T>::forward(const Context<T>& ctx, Var<T> x) const {
  Var<T> xd = dw1_.forward(ctx, x);
  Var<T> x1 = f1_.forward(ctx, xd);
  Var<T> x2 = f2_.forward(ctx, xd);
  Var<T> prod;
  {
    ScopeGuard<T> scope(ctx.tape, name_);
    prod = ops::mul(ops::relu6(x1), x2);
  }
  Var<T> fresh = dw2_.forward(ctx, g_.forward(ctx, prod));
  ScopeGuard<T> scope(ctx.tape, name_);
  if (cfg_.dropout_p > 0.0 && ctx.mode == Mode::Train) {
    if (!ctx.rng) throw UsageError(name_ + ": train-mode dropout needs an rng");
    fresh = ops::dropout(fresh, cfg_.dropout_p, ctx.mode, *ctx.rng);
  }
  return ops::add(x, fresh);
}

template <typename T>
std::int64_t Star<T>::analytic_params() const {
  return dw1_.analytic_params() + f1_.analytic_params() + f2_.analytic_params() + g_.analytic_params() +
         dw2_.analytic_params();
}

template <typename T>
Shape Star<T>::count(const Shape& in, CountReport& report) const {
  const Shape a = dw1_.count(in, report);
  const Shape b = f1_.count(a, report);
  f2_.count(a, report);
  return dw2_.count(g_.count(b, report), report);
}

// ---------------------------------------------------------------------------
// DetectHead

template <typename T>
DetectHead<T>::DetectHead(std::string name, const HeadConfig& cfg, ParameterStore<T>& store, Rng& rng)
    : name_(std::move(name)), cfg_(cfg) {
  if (cfg.level_channels.empty()) throw UsageError(name_ + ": no pyramid levels");
  if (cfg.num_classes < 1) throw UsageError(name_ + ": num_classes must be >= 1");
  const std::size_t levels = cfg.level_channels.size();
  for (std::size_t i = 0; i < levels; ++i) {
    ConvSpec a;
    a.cin = cfg.level_channels[i];
    a.cout = cfg.hidden;
    a.norm = Norm::Group;
    a.act = Act::SiLU;
    adapters_.emplace_back(name_ + ".level" + std::to_string(i) + ".adapter", a, store, rng);
  }
  const std::size_t copies = cfg.shared ? 1 : levels;
  for (std::size_t i = 0; i < copies; ++i) {
    const std::string prefix = cfg.shared ? name_ + ".shared" : name_ + ".level" + std::to_string(i);
    ConvSpec c;
    c.cin = cfg.hidden;
    c.cout = cfg.hidden;
    c.kernel = 3;
    c.norm = Norm::Group;
    c.act = Act::SiLU;
    towers_.push_back({ConvUnit<T>(prefix + ".conv0", c, store, rng), ConvUnit<T>(prefix + ".conv1", c, store, rng)});
    ConvSpec b;
    b.cin = cfg.hidden;
    b.cout = 4;
    b.bias = true;
    b.init_gain = 1.0;
    box_.emplace_back(prefix + ".box", b, store, rng);
    ConvSpec k = b;
    k.cout = cfg.num_classes;
    k.bias_init = kClassPriorBias;
    cls_.emplace_back(prefix + ".cls", k, store, rng);
  }
  for (std::size_t i = 0; i < levels; ++i) {
    scales_.push_back(
        &store.create(name_ + ".level" + std::to_string(i) + ".scale", Tensor<T>::scalar(T(1)), true, false));
  }
}

template <typename T>
const ConvUnit<T>& DetectHead<T>::tower(std::size_t level, int index) const {
  return towers_[stack_index(level)][static_cast<std::size_t>(index)];
}

template <typename T>
std::vector<LevelRaw<T>> DetectHead<T>::forward(const Context<T>& ctx, const std::vector<Var<T>>& features) const {
  if (features.size() != adapters_.size()) {
    throw ShapeError(name_ + ": expected " + std::to_string(adapters_.size()) + " pyramid levels, got " +
                     std::to_string(features.size()));
  }
  std::vector<LevelRaw<T>> out;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t s = stack_index(i);
    Var<T> h = adapters_[i].forward(ctx, features[i]);
    h = towers_[s][1].forward(ctx, towers_[s][0].forward(ctx, h));
    Var<T> box = box_[s].forward(ctx, h);
    Var<T> cls = cls_[s].forward(ctx, h);
    ScopeGuard<T> scope(ctx.tape, name_ + ".level" + std::to_string(i));
    box = ops::mul_scalar(box, ctx.tape.param(*scales_[i]));
    out.push_back(LevelRaw<T>{box, cls});
  }
  return out;
}

template <typename T>
std::int64_t DetectHead<T>::analytic_params() const {
  std::int64_t p = static_cast<std::int64_t>(scales_.size());
  for (const auto& a : adapters_) p += a.analytic_params();
  for (std::size_t i = 0; i < towers_.size(); ++i) {
    p += towers_[i][0].analytic_params() + towers_[i][1].analytic_params() + box_[i].analytic_params() +
         cls_[i].analytic_params();
  }
  return p;
}

template <typename T>
void DetectHead<T>::count(const std::vector<Shape>& in, CountReport& report) const {
  const std::size_t levels = adapters_.size();
  std::vector<Shape> hidden;
  for (std::size_t i = 0; i < levels; ++i) hidden.push_back(adapters_[i].count(in[i], report));
  // Shared layers: one row, parameters once, MACs summed over levels.
  const auto add_layer = [&](const ConvUnit<T>& unit, const Shape& s) {
    if (CountRow* row = report.find(unit.name())) {
      row->macs += unit.macs(s);
      return;
    }
    unit.count(s, report);
  };
  for (std::size_t i = 0; i < levels; ++i) {
    const std::size_t s = stack_index(i);
    add_layer(towers_[s][0], hidden[i]);
    add_layer(towers_[s][1], hidden[i]);
    add_layer(box_[s], hidden[i]);
    add_layer(cls_[s], hidden[i]);
  }
  std::vector<std::string> names;
  for (const auto* s : scales_) names.push_back(s->name);
  report.rows.push_back(
      CountRow{name_ + ".scales", "scale", static_cast<std::int64_t>(levels), 0, Shape{1, 1, 1, 1}, names});
}

template class ConvUnit<float>;
template class ConvUnit<double>;
template class WaveletPoolLayer<float>;
template class WaveletPoolLayer<double>;
template class C2fLite<float>;
template class C2fLite<double>;
template class ContextGuided<float>;
template class ContextGuided<double>;
template class Star<float>;
template class Star<double>;
template class DetectHead<float>;
template class DetectHead<double>;

}  // namespace rsnet
