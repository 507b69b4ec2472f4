#include "compatkit/io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace compat {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

bool parse_row(std::string_view line, std::vector<double>& out) {
  out.clear();
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    auto field = trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos));
    if (!field.empty() && field.front() == '+') field.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) return false;
    out.push_back(v);
    if (comma == std::string_view::npos) return true;
    pos = comma + 1;
  }
}

}  // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix<double> parse_csv_matrix(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty()) continue;
    if (!parse_row(body, row)) {
      if (first) {
        first = false;
        continue;
      }
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": non-numeric field");
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(rows.front().size()) + " fields, got " +
                                        std::to_string(row.size()));
    rows.push_back(row);
  }
  if (rows.empty()) throw Error(ErrorKind::Parse, "no numeric rows");
  Matrix<double> m(Index(rows.size()), Index(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) {
      const double v = rows[std::size_t(i)][std::size_t(j)];
      if (!std::isfinite(v))
        throw Error(ErrorKind::NonFiniteInput, "non-finite value at row " + std::to_string(i + 1) +
                                                   ", column " + std::to_string(j + 1));
      m(i, j) = v;
    }
  return m;
}

Matrix<double> read_csv_matrix(const std::string& path) {
  try {
    return parse_csv_matrix(read_text_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path + ": " + e.what());
  }
}

Vector<double> read_csv_vector(const std::string& path) {
  const auto m = read_csv_matrix(path);
  if (m.cols() == 1) return m.col(0);
  if (m.rows() == 1) return m.row(0).transpose();
  throw Error(ErrorKind::DimensionMismatch, path + ": expected a single column of values");
}

void write_csv_matrix(const std::string& path, const Matrix<double>& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << std::setprecision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

ActiveSet parse_active_set(const std::string& spec, Index p) {
  std::string text = spec;
  std::error_code ec;
  if (std::filesystem::is_regular_file(spec, ec)) text = read_text_file(spec);
  const auto body = trim(text);
  if (body.empty()) throw Error(ErrorKind::InvalidActiveSet, "empty active set");

  std::vector<long long> idx;
  if (body.front() == '[' || body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, std::string("active set JSON: ") + e.what());
    }
    if (j.is_object()) {
      if (!j.contains("active")) throw Error(ErrorKind::Parse, "active set JSON lacks \"active\"");
      j = j.at("active");
    }
    if (!j.is_array()) throw Error(ErrorKind::Parse, "active set JSON must be an array");
    for (const auto& v : j) {
      if (!v.is_number_integer())
        throw Error(ErrorKind::InvalidActiveSet, "active set entries must be integers");
      idx.push_back(v.get<long long>());
    }
  } else {
    std::string flat(body);
    for (char& c : flat)
      if (c == ',' || c == '\n' || c == '\r' || c == '\t') c = ' ';
    std::istringstream in(flat);
    std::string tok;
    while (in >> tok) {
      long long v = 0;
      const auto [ptr, err] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (err != std::errc() || ptr != tok.data() + tok.size())
        throw Error(ErrorKind::InvalidActiveSet, "bad active-set index '" + tok + "'");
      idx.push_back(v);
    }
  }
  return ActiveSet::from_one_based(idx, p);
}

std::string sha256_file(const std::string& path) {
  const auto bytes = read_text_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::Io, "SHA-256 failed for '" + path + "'");
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) hex << std::setw(2) << int(digest[i]);
  return hex.str();
}

}  // namespace compat
