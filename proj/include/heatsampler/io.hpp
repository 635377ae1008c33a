#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/fields.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace heatsampler::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// Shortest round-trip-safe decimal form used in every CSV artifact.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }
  void header(const std::vector<std::string>& cols) {
    for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
    out_ << '\n';
  }
  void row(const std::vector<double>& vals) {
    for (std::size_t i = 0; i < vals.size(); ++i) out_ << (i ? "," : "") << format_double(vals[i]);
    out_ << '\n';
  }
  /// Row with leading text fields.
  void row(const std::vector<std::string>& text, const std::vector<double>& vals) {
    bool first = true;
    for (const auto& t : text) {
      out_ << (first ? "" : ",") << t;
      first = false;
    }
    for (double v : vals) {
      out_ << (first ? "" : ",") << format_double(v);
      first = false;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return json::parse(in);
}

inline constexpr char kMatrixMagic[8] = {'H', 'S', 'O', 'P', 'M', 'A', 'T', '1'};

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}
}  // namespace detail

/// Binary container: magic, u64 header length, JSON header, row-major little-endian doubles.
inline void write_matrix(const fs::path& path, const Eigen::MatrixXd& m, json header = json::object()) {
  header["rows"] = m.rows();
  header["cols"] = m.cols();
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(kMatrixMagic, 8);
  detail::put_u64(out, h.size());
  out.write(h.data(), std::streamsize(h.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::uint64_t bits;
      const double v = m(r, c);
      std::memcpy(&bits, &v, 8);
      detail::put_u64(out, bits);
    }
}

inline Eigen::MatrixXd read_matrix(const fs::path& path, json* header = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMatrixMagic, 8) != 0) throw Error(path.string() + " is not an operator matrix file");
  const std::uint64_t len = detail::get_u64(in);
  std::string h(len, '\0');
  in.read(h.data(), std::streamsize(len));
  const json hj = json::parse(h);
  const auto rows = hj.at("rows").get<Eigen::Index>(), cols = hj.at("cols").get<Eigen::Index>();
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      const std::uint64_t bits = detail::get_u64(in);
      double v;
      std::memcpy(&v, &bits, 8);
      m(r, c) = v;
    }
  if (!in) throw Error(path.string() + " is truncated");
  if (header) *header = hj;
  return m;
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

/// Records produced files; the manifest lists relative paths with hashes and sizes.
class Manifest {
 public:
  explicit Manifest(fs::path root) : root_(std::move(root)) {}
  const fs::path& root() const { return root_; }
  fs::path path(const std::string& name) const { return root_ / name; }
  void add(const std::string& name) { files_.push_back(name); }

  json to_json() const {
    json files = json::array();
    for (const auto& f : files_) {
      const fs::path p = root_ / f;
      files.push_back({{"path", f}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
    }
    return json{{"schema", "heatsampler/manifest/1"}, {"files", files}};
  }
  fs::path write() const {
    const fs::path p = root_ / "manifest.json";
    write_json(p, to_json());
    return p;
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

}  // namespace heatsampler::io
