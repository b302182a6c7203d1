#pragma once

// Checkpoint container (see docs/checkpoint-format.md):
//
//   8 bytes   magic "MSDMLCK1"
//   8 bytes   header length H (little-endian u64)
//   H bytes   JSON header: kind, seed, config echo, arrays [{name, rows, cols}]
//   ...       array payloads in header order, little-endian f64, column-major
//   8 bytes   FNV-1a 64 of every byte between the magic and this trailer

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdml/error.hpp"
#include "msdml/io.hpp"
#include "msdml/msnet.hpp"
#include "msdml/nn.hpp"

namespace msdml {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[9] = "MSDMLCK1";

struct NamedArray {
  std::string name;
  Eigen::MatrixXd values;
};

struct Container {
  nlohmann::json header;  // without the "arrays" entry
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    fail<DataError>("checkpoint has no array '", name, "'");
  }
};

inline void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header = c.header;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : c.arrays) header["arrays"].push_back({{"name", a.name}, {"rows", a.values.rows()}, {"cols", a.values.cols()}});
  const std::string hdr = header.dump();

  std::string body;
  const std::uint64_t hlen = hdr.size();
  body.append(reinterpret_cast<const char*>(&hlen), 8);
  body += hdr;
  for (const auto& a : c.arrays)
    body.append(reinterpret_cast<const char*>(a.values.data()), static_cast<std::size_t>(a.values.size()) * 8);
  const std::uint64_t hash = io::fnv1a(body);

  io::atomic_write(path, [&](std::ostream& os) {
    os.write(kCheckpointMagic, 8);
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    os.write(reinterpret_cast<const char*>(&hash), 8);
  });
}

inline Container read_container(const std::filesystem::path& path) {
  const std::string raw = io::read_file(path);
  const std::string where = path.string();
  require<DataError>(raw.size() >= 24, "checkpoint ", where, " is truncated (", raw.size(), " bytes)");
  require<DataError>(std::memcmp(raw.data(), kCheckpointMagic, 8) == 0, "checkpoint ", where, " has a bad magic");
  const std::string_view body(raw.data() + 8, raw.size() - 16);
  std::uint64_t stored = 0;
  std::memcpy(&stored, raw.data() + raw.size() - 8, 8);

  std::uint64_t hlen = 0;
  std::memcpy(&hlen, body.data(), 8);
  require<DataError>(hlen <= body.size() - 8, "checkpoint ", where, " is truncated inside the header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail<DataError>("checkpoint ", where, " has a malformed header: ", e.what());
  }
  require<DataError>(header.contains("arrays") && header["arrays"].is_array(), "checkpoint ", where,
                     " header lists no arrays");

  std::size_t expected = 8 + hlen;
  for (const auto& a : header["arrays"]) expected += a.at("rows").get<std::size_t>() * a.at("cols").get<std::size_t>() * 8;
  require<DataError>(expected == body.size(), "checkpoint ", where, " is truncated or padded: payload ", body.size(),
                     " bytes, header implies ", expected);
  require<DataError>(io::fnv1a(body) == stored, "checkpoint ", where, " failed its checksum");

  Container c;
  std::size_t off = 8 + hlen;
  for (const auto& a : header["arrays"]) {
    NamedArray arr{a.at("name").get<std::string>(),
                   Eigen::MatrixXd(a.at("rows").get<Eigen::Index>(), a.at("cols").get<Eigen::Index>())};
    const std::size_t n = static_cast<std::size_t>(arr.values.size()) * 8;
    std::memcpy(arr.values.data(), body.data() + off, n);
    off += n;
    c.arrays.push_back(std::move(arr));
  }
  header.erase("arrays");
  c.header = std::move(header);
  return c;
}

template <typename T>
void store_params(Container& c, const nn::ParamStore<T>& p) {
  for (std::size_t i = 0; i < p.values.size(); ++i) c.arrays.push_back({p.info[i].name, p.values[i].template cast<double>()});
}

template <typename T>
void load_params(const Container& c, nn::ParamStore<T>& p, const std::string& where) {
  require<DataError>(c.arrays.size() == p.values.size(), where, ": expected ", p.values.size(), " arrays, found ",
                     c.arrays.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const auto& a = c.array(p.info[i].name);
    require<DataError>(a.values.rows() == p.values[i].rows() && a.values.cols() == p.values[i].cols(), where,
                       ": array '", a.name, "' has shape ", a.values.rows(), "x", a.values.cols(), ", expected ",
                       p.values[i].rows(), "x", p.values[i].cols());
    p.values[i] = a.values.template cast<T>();
  }
}

template <typename T>
void save_network(const MultiscaleNet<T>& net, const std::filesystem::path& path) {
  Container c;
  c.header = {{"kind", "msnet"}, {"seed", net.seed()}, {"config", nlohmann::json(net.config())},
              {"param_count", net.param_count()}};
  store_params(c, net.params());
  write_container(path, c);
}

// Loads a network. When `expected` is given, the stored configuration must
// match it exactly.
template <typename T = float>
MultiscaleNet<T> load_network(const std::filesystem::path& path, const NetworkConfig* expected = nullptr) {
  const Container c = read_container(path);
  require<DataError>(c.header.value("kind", "") == "msnet", path.string(), " is not a network checkpoint");
  NetworkConfig cfg;
  try {
    cfg = c.header.at("config").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail<DataError>(path.string(), ": bad config echo: ", e.what());
  }
  if (expected != nullptr && !(cfg == *expected))
    fail<DataError>(path.string(), ": checkpoint config ", nlohmann::json(cfg).dump(), " does not match expected ",
                    nlohmann::json(*expected).dump());
  MultiscaleNet<T> net(cfg, c.header.value("seed", std::uint64_t{0}));
  load_params(c, net.params(), path.string());
  return net;
}

}  // namespace msdml
