#pragma once

#include "compatkit/core.hpp"

#include <string>

namespace compat {

std::string read_text_file(const std::string& path);

/// Comma-separated numeric table, rows = observations. A first line that
/// does not parse as numbers is taken as a header and skipped.
Matrix<double> parse_csv_matrix(const std::string& text);
Matrix<double> read_csv_matrix(const std::string& path);

/// A single column (or a single row) of numbers.
Vector<double> read_csv_vector(const std::string& path);

void write_csv_matrix(const std::string& path, const Matrix<double>& m);

/// Active set from 1-based indices given as "1,4,7", a JSON array, a JSON
/// object with an "active" array, or a file holding any of these.
ActiveSet parse_active_set(const std::string& spec, Index p);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace compat
