#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"

#include "d2c/checkpoint.hpp"
#include "d2c/errors.hpp"
#include "d2c/mlp.hpp"
#include "d2c/oracle/oracle.hpp"
#include "d2c/random.hpp"

using namespace d2c;

namespace {

MlpSpec make_spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                  std::uint64_t seed, Activation act = Activation::tanh) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden = std::move(hidden);
  s.output_dim = out;
  s.init_seed = seed;
  s.activation = act;
  return s;
}

// Matrix-arithmetic reference written from the parameter layout: per layer a
// column-major out x in weight block followed by the bias.
std::vector<double> reference_forward(const MlpSpec& s, const Eigen::VectorXd& theta,
                                      std::vector<double> x) {
  std::size_t pos = 0;
  for (std::size_t l = 0; l < s.layer_count(); ++l) {
    const std::size_t in = s.layer_in(l), out = s.layer_out(l);
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      long double acc = theta[static_cast<Eigen::Index>(pos + in * out + o)];
      for (std::size_t i = 0; i < in; ++i) {
        acc += static_cast<long double>(theta[static_cast<Eigen::Index>(pos + i * out + o)]) * x[i];
      }
      y[o] = static_cast<double>(acc);
    }
    if (l + 1 < s.layer_count()) {
      for (auto& v : y) v = s.activation == Activation::relu ? std::max(0.0, v) : std::tanh(v);
    }
    x = std::move(y);
    pos += (in + 1) * out;
  }
  return x;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

TEST_SUITE("approximator") {

TEST_CASE("spec validation and parameter count") {
  const auto s = make_spec(3, {4, 5}, 2, 0);
  CHECK(s.parameter_count() == (3 + 1) * 4 + (4 + 1) * 5 + (5 + 1) * 2);
  CHECK_THROWS_AS(make_spec(0, {4}, 2, 0).validate(), InvalidInput);
  CHECK_THROWS_AS(make_spec(3, {0}, 2, 0).validate(), InvalidInput);
  CHECK_THROWS_AS(Mlp(s, ParameterSet{Eigen::VectorXd::Zero(3)}), InvalidInput);
}

TEST_CASE("forward examples") {
  const auto s = make_spec(3, {4}, 2, 0);
  const Mlp zero(s, ParameterSet{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.parameter_count()))});
  const std::vector<double> x = {0.3, -1.0, 2.0};
  for (double v : zero.forward(x)) CHECK(v == 0.0);

  auto lin = make_spec(3, {}, 3, 0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lin.parameter_count()));
  for (Eigen::Index i = 0; i < 3; ++i) theta[i * 3 + i] = 1.0;
  const Mlp id(lin, ParameterSet{theta});
  CHECK(id.forward(x) == x);

  const std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(id.forward(wrong), InvalidInput);
}

TEST_CASE("forward matches the reference implementation") {
  Rng rng = make_rng(21, Stream::init);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < 30; ++c) {
    const Activation act = c % 2 ? Activation::relu : Activation::tanh;
    const auto s = make_spec(1 + c % 4, {3 + static_cast<std::size_t>(c % 5), 4}, 2 + c % 3,
                             static_cast<std::uint64_t>(c), act);
    const Mlp net(s);
    std::vector<double> x(s.input_dim);
    for (auto& v : x) v = nd(rng);
    const auto got = net.forward(x);
    const auto want = reference_forward(s, net.params().values, x);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
  }
}

TEST_CASE("batched forward equals per-column forward") {
  const auto s = make_spec(2, {8, 8}, 3, 4, Activation::relu);
  const Mlp net(s);
  Eigen::MatrixXd in(2, 5);
  in.setRandom();
  const Eigen::MatrixXd out = net.forward(in);
  for (Eigen::Index c = 0; c < 5; ++c) {
    const std::vector<double> x = {in(0, c), in(1, c)};
    const auto y = net.forward(x);
    for (Eigen::Index r = 0; r < 3; ++r) CHECK(out(r, c) == doctest::Approx(y[static_cast<std::size_t>(r)]).epsilon(1e-14));
  }
}

TEST_CASE("backward examples") {
  const auto s = make_spec(3, {4}, 2, 1);
  const Mlp net(s);
  const std::vector<double> x = {0.3, -1.0, 2.0};
  const std::vector<double> zero = {0.0, 0.0};
  const auto g0 = net.backward(x, zero);
  CHECK(g0.params.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g0.input.cwiseAbs().maxCoeff() == 0.0);

  const auto lin = make_spec(3, {}, 2, 2);
  const Mlp l(lin);
  const std::vector<double> go = {0.7, -1.3};
  const auto g = l.backward(x, go);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t o = 0; o < 2; ++o) {
      CHECK(g.params[static_cast<Eigen::Index>(i * 2 + o)] == doctest::Approx(go[o] * x[i]));
    }
  }
  CHECK(g.params[6] == doctest::Approx(0.7));
  CHECK(g.params[7] == doctest::Approx(-1.3));
}

TEST_CASE("backward agrees with finite differences") {
  Rng rng = make_rng(22, Stream::init);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < 25; ++c) {
    std::vector<std::size_t> hidden;
    for (int l = 0; l < c % 3; ++l) hidden.push_back(2 + static_cast<std::size_t>((c + l) % 30));
    const auto s = make_spec(1 + c % 3, hidden, 1 + c % 4, static_cast<std::uint64_t>(100 + c));
    const Mlp net(s);
    std::vector<double> x(s.input_dim), go(s.output_dim);
    for (auto& v : x) v = nd(rng);
    for (auto& v : go) v = nd(rng);
    const auto g = net.backward(x, go);
    auto f = [&](const std::vector<double>& theta) {
      const auto y = reference_forward(s, Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size())), x);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += go[i] * y[i];
      return acc;
    };
    const auto fd = oracle::fd_gradient(f, to_vec(net.params().values), 1e-6);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      diff += std::pow(fd[i] - g.params[static_cast<Eigen::Index>(i)], 2);
      norm += fd[i] * fd[i];
    }
    CHECK(std::sqrt(diff) <= 1e-6 * std::max(1e-12, std::sqrt(norm)));
    // Input gradient too.
    auto fx = [&](const std::vector<double>& xi) {
      const auto y = net.forward(xi);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += go[i] * y[i];
      return acc;
    };
    const auto fdx = oracle::fd_gradient(fx, x, 1e-6);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(fdx[i] - g.input(static_cast<Eigen::Index>(i), 0)) <= 1e-7);
  }
}

TEST_CASE("initialisation is seeded and bounded") {
  const auto s = make_spec(4, {16}, 3, 77);
  const Mlp a(s), b(s);
  CHECK(a.params().values == b.params().values);
  auto s2 = s;
  s2.init_seed = 78;
  CHECK(Mlp(s2).params().values != a.params().values);
  // First layer weights within 1/sqrt(fan_in).
  for (Eigen::Index i = 0; i < 64; ++i) CHECK(std::abs(a.params().values[i]) <= 0.5);
  auto z = s;
  z.zero_output_layer = true;
  const Mlp zn(z);
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  for (double v : zn.forward(x)) CHECK(v == 0.0);
}

TEST_CASE("optimizer examples") {
  ParameterSet p{Eigen::VectorXd::Constant(1, 1.0)};
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  auto st = OptimizerState::for_parameters(p, cfg);
  optimizer_step(st, p, Eigen::VectorXd::Zero(1));
  CHECK(p.values[0] == 1.0);
  CHECK(st.step == 1);
  optimizer_step(st, p, Eigen::VectorXd::Constant(1, 2.0 * p.values[0]));
  CHECK(std::abs(p.values[0]) < 1.0);

  const Eigen::VectorXd before = p.values;
  const auto st_before = st;
  CHECK_THROWS_AS(optimizer_step(st, p, Eigen::VectorXd::Constant(1, NAN)), PoisonError);
  CHECK(p.values == before);
  CHECK(st.step == st_before.step);
}

TEST_CASE("adam converges on a quadratic") {
  ParameterSet p{Eigen::VectorXd::Constant(3, 2.0)};
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  auto st = OptimizerState::for_parameters(p, cfg);
  for (int i = 0; i < 2000; ++i) optimizer_step(st, p, 2.0 * p.values);
  CHECK(p.values.cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("target update examples and contraction") {
  ParameterSet target{Eigen::VectorXd::Zero(2)};
  const ParameterSet online{Eigen::VectorXd::Constant(2, 2.0)};
  target_update(target, online, 0.5);
  CHECK(target.values[0] == 1.0);
  target_update(target, online, 1.0);
  CHECK(target.values == online.values);
  CHECK_THROWS_AS(target_update(target, online, 0.0), InvalidInput);
  CHECK_THROWS_AS(target_update(target, online, 1.5), InvalidInput);

  ParameterSet t{Eigen::VectorXd::Constant(4, -3.0)};
  double prev = (t.values - online.values.replicate(2, 1)).norm();
  for (int i = 0; i < 10; ++i) {
    target_update(t, ParameterSet{Eigen::VectorXd::Constant(4, 2.0)}, 0.005);
    const double d = (t.values - Eigen::VectorXd::Constant(4, 2.0)).norm();
    CHECK(d < prev);
    prev = d;
  }
}

TEST_CASE("checkpoint round trip") {
  Checkpoint ck;
  ck.metadata_json = R"({"seed": 3})";
  const auto s = make_spec(2, {5}, 3, 9);
  const Mlp net(s);
  auto opt = OptimizerState::for_parameters(net.params(), AdamConfig{});
  opt.step = 17;
  opt.first_moment.setConstant(0.25);
  ck.networks.push_back({"actor", s, net.params(), opt});
  ck.networks.push_back({"actor_target", s, net.params(), std::nullopt});

  std::stringstream buf;
  write_checkpoint(buf, ck);
  const auto back = read_checkpoint(buf);
  CHECK(back.metadata_json == ck.metadata_json);
  REQUIRE(back.networks.size() == 2);
  CHECK(back.network("actor").spec == s);
  CHECK(back.network("actor").params.values == net.params().values);
  REQUIRE(back.network("actor").optimizer.has_value());
  CHECK(back.network("actor").optimizer->step == 17);
  CHECK(back.network("actor").optimizer->first_moment == opt.first_moment);
  CHECK_FALSE(back.network("actor_target").optimizer.has_value());
  CHECK_THROWS_AS(back.network("critic1"), InvalidInput);

  // Re-serialising is byte-identical.
  std::stringstream again;
  write_checkpoint(again, back);
  CHECK(again.str() == [&] { std::stringstream b; write_checkpoint(b, ck); return b.str(); }());
}

TEST_CASE("checkpoint rejects corrupt and foreign files") {
  Checkpoint ck;
  ck.networks.push_back({"actor", make_spec(1, {}, 1, 0), Mlp(make_spec(1, {}, 1, 0)).params(), std::nullopt});
  std::stringstream buf;
  write_checkpoint(buf, ck);
  std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(truncated), InvalidInput);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::stringstream bm(bad_magic);
  CHECK_THROWS_AS(read_checkpoint(bm), InvalidInput);

  std::string other = bytes;
  other[8] = static_cast<char>(kCheckpointVersion + 1);  // little-endian version word
  std::stringstream ov(other);
  try {
    read_checkpoint(ov);
    FAIL("expected a version error");
  } catch (const VersionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(std::to_string(kCheckpointVersion + 1)) != std::string::npos);
    CHECK(msg.find(std::to_string(kCheckpointVersion)) != std::string::npos);
  }
}

}  // TEST_SUITE
