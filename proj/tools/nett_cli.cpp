// nett: command-line driver for phantoms, forward data, FBP, training,
// NETT reconstruction, rate experiments and gradient checks.
//
// Exit codes: 0 success, 1 usage or input error, 2 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "nett/nett.hpp"

namespace fs = std::filesystem;
using namespace nett;

namespace {

constexpr const char* kVersion = "nett 1.0.0";

/// Records what was run so it can be repeated. No timestamps: reruns must be
/// byte-identical.
class Manifest {
 public:
  explicit Manifest(std::string command) { kv_.set("command", std::move(command)); }

  template <class T>
  Manifest& add(const std::string& key, const T& value) {
    std::ostringstream os;
    os.precision(17);
    os << value;
    kv_.set(key, os.str());
    return *this;
  }

  void add_config(const KeyValues& cfg) {
    const std::string text = cfg.to_string();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(text.data(), text.size())));
    kv_.set("config_hash", hex);
    for (const auto& k : cfg.keys()) kv_.set("config." + k, cfg.get(k));
  }

  void write(const fs::path& path) const {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write manifest " + path.string());
    os << "# " << kVersion << '\n' << kv_.to_string();
  }

 private:
  KeyValues kv_;
};

KeyValues load_config(const std::string& path, const std::vector<std::string>& allowed) {
  if (path.empty()) return {};
  KeyValues kv = KeyValues::load(path);
  kv.require_known(allowed);
  return kv;
}

PatGeometry load_geometry(const std::string& path) {
  if (path.empty()) return PatGeometry::desk_sparse();
  return PatGeometry::from_keyvalues(KeyValues::load(path));
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.filename().string() + suffix);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------

struct PhantomArgs {
  std::string kind = "ellipse";
  std::uint64_t seed = 0;
  std::size_t n = 64;
  std::string out;
};

int cmd_phantom(const PhantomArgs& a) {
  Image x;
  if (a.kind == "ellipse") {
    EllipsePhantomSpec s;
    s.seed = a.seed;
    s.grid_n = a.n;
    x = gen_ellipse_phantom(s);
  } else {
    BlobPhantomSpec s;
    s.seed = a.seed;
    s.grid_n = a.n;
    x = gen_blob_phantom(s);
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_grid(dir / "phantom.nett", x);
  save_pgm(dir / "phantom.pgm", x);
  Manifest m("phantom");
  m.add("kind", a.kind).add("seed", a.seed).add("n", a.n).add("phantom_hash", hash_values(x.values()));
  m.write(dir / "manifest.txt");
  std::cout << "phantom " << a.kind << " seed " << a.seed << " -> " << (dir / "phantom.nett").string() << '\n';
  return 0;
}

struct ForwardArgs {
  std::string geom, in, out;
  double noise = 0.0;
  std::uint64_t noise_seed = 1;
};

int cmd_forward(const ForwardArgs& a) {
  const PatGeometry g = load_geometry(a.geom);
  const PatOperator op(g);
  const Image x = load_image(a.in);
  Sinogram y = op.apply(x);
  double delta = 0.0;
  if (a.noise > 0.0) {
    SeededRng rng(a.noise_seed);
    auto nd = add_noise(y, a.noise, rng);
    y = std::move(nd.y_delta);
    delta = nd.delta;
  }
  const fs::path out(a.out);
  ensure_parent(out);
  save_grid(out, y);
  Manifest m("forward");
  m.add("in", a.in).add("noise", a.noise).add("noise_seed", a.noise_seed).add("delta", delta);
  m.add_config(g.to_keyvalues());
  m.write(sibling(out, ".manifest"));
  std::cout << "forward " << y.rows() << "x" << y.cols() << " delta " << delta << '\n';
  return 0;
}

struct FbpArgs {
  std::string geom, in, out, filter = "log_kernel";
};

int cmd_fbp(const FbpArgs& a) {
  const PatGeometry g = load_geometry(a.geom);
  const PatOperator op(g);
  const FbpConfig cfg{parse_fbp_filter(a.filter), 0.0};
  const Image x = fbp_reconstruct(op, cfg, load_sinogram(a.in));
  const fs::path out(a.out);
  ensure_parent(out);
  save_grid(out, x);
  save_pgm(sibling(out, ".pgm"), x);
  Manifest m("fbp");
  m.add("in", a.in).add("filter", to_string(cfg.filter)).add("scale", cfg.effective_scale());
  m.add_config(g.to_keyvalues());
  m.write(sibling(out, ".manifest"));
  return 0;
}

struct TrainSetArgs {
  std::string geom, out, source = "fbp";
  std::size_t n_half = 100;
  std::uint64_t seed = 1;
};

int cmd_trainset(const TrainSetArgs& a) {
  const PatGeometry g = load_geometry(a.geom);
  const PatOperator op(g);
  const auto src = a.source == "adjoint" ? ArtifactSource::adjoint : ArtifactSource::fbp;
  const TrainSet set = build_training_set(op, FbpConfig{}, a.n_half, a.seed, src);
  save_train_set(a.out, set);
  std::cout << "training set: " << set.size() << " pairs -> " << a.out << '\n';
  return 0;
}

const std::vector<std::string> kTrainKeys = {"epochs",    "batch_size", "learning_rate", "momentum", "train_seed",
                                             "loss",      "init_seed",  "base_channels", "levels",   "skip",
                                             "leak"};

struct TrainArgs {
  std::string data, config, out;
};

int cmd_train(const TrainArgs& a) {
  const KeyValues cfg = load_config(a.config, kTrainKeys);
  const TrainConfig tc = train_config_from(cfg);
  const TrainSet set = load_train_set(a.data);
  const std::size_t n = set.pairs.front().input.rows();
  Network net = Network::unet(n, static_cast<std::size_t>(cfg.get_int("base_channels", 8)),
                              static_cast<std::size_t>(cfg.get_int("levels", 2)), cfg.get_int("skip", 1) != 0,
                              cfg.get_double("leak", 0.1));
  net.initialize(static_cast<std::uint64_t>(cfg.get_int("init_seed", 3)));
  const TrainResult r = train(net, set, tc);
  const fs::path out(a.out);
  ensure_parent(out);
  net.save(out);
  save_loss_csv(sibling(out, ".loss.csv"), r);
  Manifest m("train");
  m.add("data", a.data).add("pairs", set.size()).add("parameters", net.parameter_count());
  m.add("final_loss", r.epoch_loss.back()).add("param_hash", hash_values(net.params()));
  m.add_config(cfg);
  m.write(sibling(out, ".manifest"));
  std::cout << "trained " << tc.epochs << " epochs, loss " << r.epoch_loss.front() << " -> " << r.epoch_loss.back()
            << '\n';
  return 0;
}

struct ReconstructArgs {
  std::string geom, net, data, out, truth, init = "fbp";
  double alpha = 0.03;
  double step = 0.4;
  bool raw_step = false;
  double p = 2.0;
  double lambda = 0.0;
  int iters = 50;
  std::string snapshot = "10,15,50";
};

int cmd_reconstruct(const ReconstructArgs& a) {
  const PatGeometry g = load_geometry(a.geom);
  const PatOperator op(g);
  const Sinogram y = load_sinogram(a.data);
  auto net = std::make_shared<const Network>(Network::load(a.net));
  const NetworkRegularizer reg(net, a.p);
  const Image fbp = fbp_reconstruct(op, FbpConfig{}, y);

  SolveConfig sc;
  sc.snapshots = parse_list<int>(a.snapshot);
  sc.max_iter = a.iters;
  for (int k : sc.snapshots) sc.max_iter = std::max(sc.max_iter, k);
  const double lambda = a.raw_step ? 0.0 : (a.lambda > 0.0 ? a.lambda : estimate_normal_norm(op, 1, kPowerIterations));
  sc.steps = {a.raw_step ? a.step : a.step / lambda};
  if (a.init == "fbp")
    sc.initial = fbp;
  else if (a.init != "zero")
    throw InvalidArgument("--init must be fbp or zero");

  const SolveResult res = nett_minimize(NettProblem{op, y, reg, a.alpha}, sc);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_grid(dir / "fbp.nett", fbp);
  save_pgm(dir / "fbp.pgm", fbp);
  for (const auto& [k, x] : res.iterates) {
    save_grid(dir / ("x_" + std::to_string(k) + ".nett"), x);
    save_pgm(dir / ("x_" + std::to_string(k) + ".pgm"), x);
  }
  save_grid(dir / "final.nett", res.final);
  save_trace_csv(dir / "trace.csv", res.trace);

  Manifest m("reconstruct");
  m.add("net", a.net).add("data", a.data).add("alpha", a.alpha).add("p", a.p).add("init", a.init);
  m.add("step", sc.steps[0]).add("lambda", lambda).add("iters", sc.max_iter).add("snapshot", a.snapshot);
  if (!a.truth.empty()) {
    const Image z = load_image(a.truth);
    const double ef = relative_error(z, fbp), en = relative_error(z, res.final);
    m.add("rel_error_fbp", ef).add("rel_error_nett", en);
    for (const auto& [k, x] : res.iterates) m.add("rel_error_x_" + std::to_string(k), relative_error(z, x));
    std::cout << "relative error: fbp " << ef << "  nett " << en << '\n';
  }
  m.add_config(g.to_keyvalues());
  m.write(dir / "manifest.txt");
  return 0;
}

struct RatesArgs {
  std::string family = "quad", rule = "prop", deltas = "0.1,0.01,0.001,0.0001,0.00001", out, measure = "bregman";
  double c = 1.0;
  std::uint64_t seed = 7;
};

int cmd_rates(const RatesArgs& a) {
  FamilySpec spec;
  spec.kind = a.family == "quad" ? FamilyKind::quadratic : FamilyKind::nonconvex;
  const RateFamily fam = make_rate_family(spec);
  const AlphaRule rule = a.rule == "prop" ? AlphaRule::proportional(a.c) : AlphaRule::matched(a.c, RateFunction::sqrt_rate());
  const ErrorMeasure m = a.measure == "bregman" ? ErrorMeasure::bregman
                         : a.measure == "norm"  ? ErrorMeasure::norm
                                                : ErrorMeasure::norm_q;
  SeededRng rng(a.seed);
  const double tol = spec.kind == FamilyKind::nonconvex && m == ErrorMeasure::bregman ? 0.3
                     : m == ErrorMeasure::norm                                     ? 0.15
                                                                                   : 0.2;
  RateReport rep = rate_experiment(fam, rule, parse_list<double>(a.deltas), m, rng, tol);
  if (rule.kind == AlphaRule::Kind::rate_matched) {
    // alpha ~ delta / sqrt(delta): Bregman O(sqrt(delta)), norm O(delta^(1/4)).
    rep.expected_slope = m == ErrorMeasure::norm ? 0.25 : 0.5;
  }
  const fs::path out(a.out);
  ensure_parent(out);
  save_rate_csv(out, rep);
  std::cout << "family " << a.family << " rule " << a.rule << " measure " << a.measure << ": slope "
            << rep.fitted_slope << " expected " << rep.expected_slope << " +- " << rep.tolerance << " -> "
            << (rep.pass() ? "pass" : "fail") << '\n';
  return 0;
}

struct GradcheckArgs {
  std::string net;
  int trials = 200;
  std::uint64_t seed = 1;
  double p = 2.0;
};

// Stencils whose +-eps points change the activation pattern straddle a kink
// and are redrawn.
int cmd_gradcheck(const GradcheckArgs& a) {
  auto net = std::make_shared<Network>(Network::load(a.net));
  SeededRng rng(a.seed);
  Image x = make_image(net->input_height());
  for (double& v : x.values()) v = rng.normal();
  const double eps = 1e-5;
  const int max_draws = 20 * a.trials;
  auto rel = [](double fd, double an) { return std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}); };
  double worst = 0.0;
  int checked = 0, redrawn = 0;

  // Input gradient of the regularizer.
  const NetworkRegularizer reg(net, a.p);
  const Image g = reg.gradient(x);
  const auto base_in = net->activation_pattern(net->encode(x));
  for (int draw = 0, done = 0; draw < max_draws && done < a.trials; ++draw) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.size()) - 1));
    Image xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    if (net->activation_pattern(net->encode(xp)) != base_in || net->activation_pattern(net->encode(xm)) != base_in) {
      ++redrawn;
      continue;
    }
    worst = std::max(worst, rel((reg.value(xp) - reg.value(xm)) / (2 * eps), g[i]));
    ++done;
    ++checked;
  }

  // Parameter gradients of <net(x), w>.
  Image w = x.zeros_like();
  for (double& v : w.values()) v = rng.normal();
  const auto cache = net->forward(x);
  const Gradients pg = net->backward(cache, &w, nullptr, true);
  const auto base_p = net->activation_pattern(cache);
  for (int draw = 0, done = 0; draw < max_draws && done < a.trials; ++draw) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(net->parameter_count()) - 1));
    const double orig = net->params()[k];
    net->params()[k] = orig + eps;
    const auto cp = net->forward(x);
    net->params()[k] = orig - eps;
    const auto cm = net->forward(x);
    net->params()[k] = orig;
    if (net->activation_pattern(cp) != base_p || net->activation_pattern(cm) != base_p) {
      ++redrawn;
      continue;
    }
    const double fd = (inner_product(cp.output(), w) - inner_product(cm.output(), w)) / (2 * eps);
    worst = std::max(worst, rel(fd, pg.params[k]));
    ++done;
    ++checked;
  }
  std::cout << "gradcheck: " << checked << " coordinates (" << redrawn << " redrawn at kinks), worst relative error "
            << worst << '\n';
  if (checked < 2 * a.trials) throw NumericError("gradcheck: too many stencils cross activation kinks");
  if (worst > 1e-4) throw NumericError("gradient check failed: worst relative error " + std::to_string(worst));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NETT: network Tikhonov regularization for sparse-data photoacoustic tomography"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* ph = app.add_subcommand("phantom", "Generate a random phantom");
  ph->add_option("--kind", pa.kind)->check(CLI::IsMember({"ellipse", "blobs"}));
  ph->add_option("--seed", pa.seed);
  ph->add_option("--n", pa.n)->check(CLI::Range(8, 4096));
  ph->add_option("--out", pa.out)->required();

  ForwardArgs fa;
  auto* fw = app.add_subcommand("forward", "Apply the sparse circular-means operator");
  fw->add_option("--geom", fa.geom, "geometry key=value file (default: desk sparse)");
  fw->add_option("--in", fa.in)->required()->check(CLI::ExistingFile);
  fw->add_option("--out", fa.out)->required();
  fw->add_option("--noise", fa.noise, "relative Gaussian noise level")->check(CLI::NonNegativeNumber);
  fw->add_option("--noise-seed", fa.noise_seed);

  FbpArgs ba;
  auto* fb = app.add_subcommand("fbp", "Filtered backprojection");
  fb->add_option("--geom", ba.geom);
  fb->add_option("--in", ba.in)->required()->check(CLI::ExistingFile);
  fb->add_option("--out", ba.out)->required();
  fb->add_option("--filter", ba.filter)->check(CLI::IsMember({"log_kernel", "ram-lak-style", "derivative2"}));

  TrainSetArgs ta;
  auto* ts = app.add_subcommand("trainset", "Build an artifact/clean training set");
  ts->add_option("--geom", ta.geom);
  ts->add_option("--n-half", ta.n_half)->check(CLI::PositiveNumber);
  ts->add_option("--seed", ta.seed);
  ts->add_option("--source", ta.source)->check(CLI::IsMember({"fbp", "adjoint"}));
  ts->add_option("--out", ta.out)->required();

  TrainArgs tr;
  auto* tn = app.add_subcommand("train", "Train the artifact-detecting encoder-decoder");
  tn->add_option("--data", tr.data)->required()->check(CLI::ExistingDirectory);
  tn->add_option("--config", tr.config)->check(CLI::ExistingFile);
  tn->add_option("--out", tr.out)->required();

  ReconstructArgs ra;
  auto* rc = app.add_subcommand("reconstruct", "NETT reconstruction with a trained network");
  rc->add_option("--geom", ra.geom);
  rc->add_option("--net", ra.net)->required()->check(CLI::ExistingFile);
  rc->add_option("--data", ra.data)->required()->check(CLI::ExistingFile);
  rc->add_option("--alpha", ra.alpha)->check(CLI::NonNegativeNumber);
  rc->add_option("--step", ra.step, "step as a multiple of 1/||F^T F||")->check(CLI::PositiveNumber);
  rc->add_flag("--raw-step", ra.raw_step, "use --step as the absolute step size");
  rc->add_option("--lambda", ra.lambda, "known ||F^T F|| (skips power iteration)");
  rc->add_option("--p", ra.p)->check(CLI::Range(1.0, 16.0));
  rc->add_option("--init", ra.init)->check(CLI::IsMember({"fbp", "zero"}));
  rc->add_option("--iters", ra.iters)->check(CLI::PositiveNumber);
  rc->add_option("--snapshot", ra.snapshot, "comma-separated iterations to save");
  rc->add_option("--truth", ra.truth, "phantom for error reporting")->check(CLI::ExistingFile);
  rc->add_option("--out", ra.out)->required();

  RatesArgs rr;
  auto* rt = app.add_subcommand("rates", "Convergence-rate experiment on a dense family");
  rt->add_option("--family", rr.family)->check(CLI::IsMember({"quad", "nclq"}));
  rt->add_option("--rule", rr.rule)->check(CLI::IsMember({"prop", "matched"}));
  rt->add_option("--deltas", rr.deltas);
  rt->add_option("--measure", rr.measure)->check(CLI::IsMember({"bregman", "norm", "norm_q"}));
  rt->add_option("--c", rr.c)->check(CLI::PositiveNumber);
  rt->add_option("--seed", rr.seed);
  rt->add_option("--out", rr.out)->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of network gradients");
  gc->add_option("--net", ga.net)->required()->check(CLI::ExistingFile);
  gc->add_option("--trials", ga.trials)->check(CLI::PositiveNumber);
  gc->add_option("--seed", ga.seed);
  gc->add_option("--p", ga.p)->check(CLI::Range(1.0, 16.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ph) return cmd_phantom(pa);
    if (*fw) return cmd_forward(fa);
    if (*fb) return cmd_fbp(ba);
    if (*ts) return cmd_trainset(ta);
    if (*tn) return cmd_train(tr);
    if (*rc) return cmd_reconstruct(ra);
    if (*rt) return cmd_rates(rr);
    if (*gc) return cmd_gradcheck(ga);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
