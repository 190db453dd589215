// Versioned binary container for named parameter groups:
//   "ARGRELCK" | u32 version | u64 header length | JSON header |
//   raw float64 tensor data in header order | SHA-256 of all preceding bytes
#pragma once

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "argrel/common.hpp"
#include "argrel/tensor.hpp"

namespace argrel {

inline constexpr char kContainerMagic[8] = {'A', 'R', 'G', 'R', 'E', 'L', 'C', 'K'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct ContainerData {
  nlohmann::json header;
  std::map<std::string, ParamSet> groups;
};

namespace detail {
template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) fail(ErrorCode::integrity, "container truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace detail

inline std::string encode_container(nlohmann::json header,
                                    const std::vector<std::pair<std::string, const ParamSet*>>& groups) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [group, ps] : groups)
    for (const auto& t : ps->tensors)
      tensors.push_back({{"group", group}, {"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  header["tensors"] = tensors;
  const std::string hdr = header.dump();

  std::string buf(kContainerMagic, sizeof(kContainerMagic));
  detail::put<std::uint32_t>(buf, kContainerVersion);
  detail::put<std::uint64_t>(buf, hdr.size());
  buf += hdr;
  for (const auto& [group, ps] : groups)
    for (const auto& t : ps->tensors)
      buf.append(reinterpret_cast<const char*>(t.value.data()),
                 static_cast<std::size_t>(t.value.size()) * sizeof(double));
  const auto digest = sha256({reinterpret_cast<const unsigned char*>(buf.data()), buf.size()});
  buf.append(reinterpret_cast<const char*>(digest.data()), digest.size());
  return buf;
}

inline ContainerData decode_container(const std::string& buf) {
  constexpr std::size_t kDigest = 32;
  if (buf.size() < sizeof(kContainerMagic) + 12 + kDigest ||
      std::memcmp(buf.data(), kContainerMagic, sizeof(kContainerMagic)) != 0)
    fail(ErrorCode::integrity, "not an argrel container");
  const std::size_t body = buf.size() - kDigest;
  const auto digest = sha256({reinterpret_cast<const unsigned char*>(buf.data()), body});
  if (std::memcmp(digest.data(), buf.data() + body, kDigest) != 0)
    fail(ErrorCode::integrity, "container checksum mismatch (file corrupted)");

  std::size_t pos = sizeof(kContainerMagic);
  const auto version = detail::get<std::uint32_t>(buf, pos);
  if (version != kContainerVersion)
    fail(ErrorCode::incompatible, "container version " + std::to_string(version) +
                                      " is not supported (expected " +
                                      std::to_string(kContainerVersion) + ")");
  const auto hlen = detail::get<std::uint64_t>(buf, pos);
  if (pos + hlen > body) fail(ErrorCode::integrity, "container header truncated");
  ContainerData out;
  try {
    out.header = nlohmann::json::parse(buf.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::integrity, std::string("container header unreadable: ") + e.what());
  }
  pos += hlen;
  for (const auto& t : out.header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (rows < 0 || cols < 0 || pos + bytes > body) fail(ErrorCode::integrity, "container data truncated");
    ParamTensor pt{t.at("name").get<std::string>(), Mat(rows, cols)};
    std::memcpy(pt.value.data(), buf.data() + pos, bytes);
    pos += bytes;
    out.groups[t.at("group").get<std::string>()].tensors.push_back(std::move(pt));
  }
  if (pos != body) fail(ErrorCode::integrity, "container has trailing bytes");
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::io, "short write to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace argrel
