#include "psfed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace psfed {

namespace {

constexpr char kMagic[5] = {'P', 'S', 'F', 'P', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64_le(std::string& out, double d) {
  std::uint64_t bits{};
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  double d{};
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::size_t n = ckpt.params.values.size();
  if (ckpt.adam.m.size() != n || ckpt.adam.v.size() != n)
    throw std::invalid_argument("save_checkpoint: adam state length mismatch");

  nlohmann::json header;
  header["arch"] = {{"input_height", ckpt.params.arch.input_height},
                    {"input_width", ckpt.params.arch.input_width},
                    {"conv_channels", ckpt.params.arch.conv_channels},
                    {"embedding_dim", ckpt.params.arch.embedding_dim},
                    {"num_classes", ckpt.params.arch.num_classes}};
  header["seed"] = ckpt.seed;
  header["round"] = ckpt.round;
  header["component"] = ckpt.component;
  header["adam_t"] = ckpt.adam.t;
  header["param_count"] = n;
  const std::string hjson = header.dump();

  std::string out;
  out.reserve(5 + 4 + hjson.size() + 24 * n);
  out.append(kMagic, 5);
  put_u32_le(out, static_cast<std::uint32_t>(hjson.size()));
  out.append(hjson);
  for (double v : ckpt.params.values) put_f64_le(out, v);
  for (double v : ckpt.adam.m) put_f64_le(out, v);
  for (double v : ckpt.adam.v) put_f64_le(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(data.data());
  if (data.size() < 9 || std::memcmp(data.data(), kMagic, 5) != 0)
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path.string());
  const std::uint32_t hlen = get_u32_le(p + 5);
  if (data.size() < 9 + static_cast<std::size_t>(hlen))
    throw std::runtime_error("load_checkpoint: truncated header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(9, hlen));
  } catch (const std::exception& e) {
    throw std::runtime_error("load_checkpoint: bad header JSON in " + path.string() + ": " +
                             e.what());
  }

  Checkpoint ckpt;
  const auto& a = header.at("arch");
  ckpt.params.arch.input_height = a.at("input_height").get<int>();
  ckpt.params.arch.input_width = a.at("input_width").get<int>();
  ckpt.params.arch.conv_channels = a.at("conv_channels").get<std::vector<int>>();
  ckpt.params.arch.embedding_dim = a.at("embedding_dim").get<int>();
  ckpt.params.arch.num_classes = a.at("num_classes").get<int>();
  ckpt.seed = header.at("seed").get<std::uint64_t>();
  ckpt.round = header.at("round").get<int>();
  ckpt.component = header.at("component").get<std::string>();
  ckpt.adam.t = header.at("adam_t").get<std::int64_t>();
  const std::size_t n = header.at("param_count").get<std::size_t>();

  ckpt.params.arch.validate();
  if (n != ckpt.params.arch.param_count())
    throw std::runtime_error("load_checkpoint: parameter count disagrees with architecture");
  const std::size_t need = 9 + static_cast<std::size_t>(hlen) + 24 * n;
  if (data.size() != need)
    throw std::runtime_error("load_checkpoint: file size mismatch in " + path.string());

  const unsigned char* body = p + 9 + hlen;
  ckpt.params.values.resize(n);
  ckpt.adam.m.resize(n);
  ckpt.adam.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) ckpt.params.values[i] = get_f64_le(body + 8 * i);
  body += 8 * n;
  for (std::size_t i = 0; i < n; ++i) ckpt.adam.m[i] = get_f64_le(body + 8 * i);
  body += 8 * n;
  for (std::size_t i = 0; i < n; ++i) ckpt.adam.v[i] = get_f64_le(body + 8 * i);
  return ckpt;
}

}  // namespace psfed
