#include "d2c/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "d2c/errors.hpp"

namespace d2c {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'D', '2', 'C', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InvalidInput("checkpoint is truncated");
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto len = get<std::uint64_t>(in);
  if (len > (1ULL << 32)) throw InvalidInput("checkpoint string length is implausible");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw InvalidInput("checkpoint is truncated");
  return s;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * static_cast<Eigen::Index>(sizeof(double))));
}

Eigen::VectorXd get_vector(std::istream& in, std::uint64_t n) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw InvalidInput("checkpoint is truncated");
  return v;
}

}  // namespace

const NetworkRecord& Checkpoint::network(const std::string& name) const {
  for (const auto& n : networks) {
    if (n.name == name) return n;
  }
  throw InvalidInput("checkpoint has no network named '" + name + "'");
}

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.metadata_json);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.networks.size()));
  for (const auto& net : ckpt.networks) {
    put_string(out, net.name);
    put<std::uint64_t>(out, net.spec.input_dim);
    put<std::uint64_t>(out, net.spec.hidden.size());
    for (std::size_t w : net.spec.hidden) put<std::uint64_t>(out, w);
    put<std::uint64_t>(out, net.spec.output_dim);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(net.spec.activation));
    put<std::uint64_t>(out, net.spec.init_seed);
    put<std::uint8_t>(out, net.spec.zero_output_layer ? 1 : 0);
    put<std::uint64_t>(out, net.params.size());
    put_vector(out, net.params.values);
    put<std::uint8_t>(out, net.optimizer ? 1 : 0);
    if (net.optimizer) {
      const auto& opt = *net.optimizer;
      put<double>(out, opt.config.learning_rate);
      put<double>(out, opt.config.beta1);
      put<double>(out, opt.config.beta2);
      put<double>(out, opt.config.epsilon);
      put<std::uint64_t>(out, opt.step);
      put_vector(out, opt.first_moment);
      put_vector(out, opt.second_moment);
    }
  }
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInput("not a checkpoint file (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw VersionError(version, kCheckpointVersion);

  Checkpoint ckpt;
  ckpt.metadata_json = get_string(in);
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NetworkRecord net;
    net.name = get_string(in);
    net.spec.input_dim = get<std::uint64_t>(in);
    const auto layers = get<std::uint64_t>(in);
    if (layers > 64) throw InvalidInput("checkpoint declares too many hidden layers");
    net.spec.hidden.clear();
    for (std::uint64_t l = 0; l < layers; ++l) net.spec.hidden.push_back(get<std::uint64_t>(in));
    net.spec.output_dim = get<std::uint64_t>(in);
    const auto act = get<std::uint8_t>(in);
    if (act > 1) throw InvalidInput("checkpoint has an unknown activation");
    net.spec.activation = static_cast<Activation>(act);
    net.spec.init_seed = get<std::uint64_t>(in);
    net.spec.zero_output_layer = get<std::uint8_t>(in) != 0;
    const auto n = get<std::uint64_t>(in);
    if (n != net.spec.parameter_count()) {
      throw InvalidInput("checkpoint parameter count does not match its network spec");
    }
    net.params.values = get_vector(in, n);
    if (get<std::uint8_t>(in) != 0) {
      OptimizerState opt;
      opt.config.learning_rate = get<double>(in);
      opt.config.beta1 = get<double>(in);
      opt.config.beta2 = get<double>(in);
      opt.config.epsilon = get<double>(in);
      opt.step = get<std::uint64_t>(in);
      opt.first_moment = get_vector(in, n);
      opt.second_moment = get_vector(in, n);
      net.optimizer = std::move(opt);
    }
    ckpt.networks.push_back(std::move(net));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace d2c
