#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kronfisher/linalg.hpp"
#include "kronfisher/rng.hpp"

namespace kronfisher {

struct Dataset {
  Tensor features;  // N x d or N x C x H x W
  std::vector<int> labels;
  int classes = 0;
  std::string name;
  std::vector<std::string> class_names;  // CSV only

  std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off,
                               const std::string& path) {
  if (off + 4 > buf.size()) throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) |
         (std::uint32_t{buf[off + 2]} << 8) | std::uint32_t{buf[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Reads an IDX image/label pair (big-endian headers, unsigned byte payload).
// Pixels are scaled to [0, 1]; features have shape N x 1 x rows x cols.
inline Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                              std::optional<std::size_t> limit = std::nullopt) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (detail::read_be32(img, 0, images_path) != kIdxImagesMagic)
    throw FormatError(images_path + ": bad IDX image magic");
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
    throw FormatError(labels_path + ": bad IDX label magic");
  const std::size_t n_img = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_lab = detail::read_be32(lab, 4, labels_path);
  if (img.size() < 16 + n_img * rows * cols) throw FormatError(images_path + ": truncated payload");
  if (lab.size() < 8 + n_lab) throw FormatError(labels_path + ": truncated payload");
  if (n_img != n_lab)
    throw ValidationError("IDX count mismatch: " + std::to_string(n_img) + " images vs " +
                          std::to_string(n_lab) + " labels");
  const std::size_t n = limit ? std::min(*limit, n_img) : n_img;
  if (n == 0) throw ValidationError("IDX dataset is empty");

  Dataset ds;
  ds.name = "mnist";
  ds.classes = 10;
  ds.features = Tensor({n, 1, rows, cols});
  const std::size_t px = rows * cols;
  for (std::size_t i = 0; i < n * px; ++i) ds.features[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    if (ds.labels[i] >= ds.classes) throw FormatError(labels_path + ": label out of range");
  }
  return ds;
}

// RFC 4180 record splitting: quoted fields may contain commas, doubled quotes
// and line breaks.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && !field_started) {
      quoted = field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw FormatError("csv: unterminated quoted field");
  if (!field.empty() || !record.empty()) end_record();
  return records;
}

// Numeric CSV with a header row. The label column may be named or given as a
// zero-based index; label strings map to class ids in order of first appearance.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
  const auto bytes = detail::read_file(path);
  const auto records = parse_csv(std::string(bytes.begin(), bytes.end()));
  if (records.size() < 2) throw FormatError(path + ": needs a header and at least one row");
  const auto& header = records[0];
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) label_idx = i;
  if (label_idx == header.size()) {
    try {
      std::size_t used = 0;
      label_idx = std::stoul(label_column, &used);
      if (used != label_column.size()) label_idx = header.size();
    } catch (const std::exception&) {
    }
  }
  if (label_idx >= header.size())
    throw ValidationError(path + ": no label column '" + label_column + "'");

  const std::size_t n = records.size() - 1, d = header.size() - 1;
  Dataset ds;
  ds.name = path;
  ds.features = Tensor({n, d});
  ds.labels.resize(n);
  std::map<std::string, int> ids;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = records[r + 1];
    const std::size_t line = r + 2;
    if (row.size() != header.size())
      throw FormatError(path + ": row " + std::to_string(line) + " has " +
                        std::to_string(row.size()) + " fields, expected " +
                        std::to_string(header.size()));
    std::size_t col = 0;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i == label_idx) {
        auto [it, inserted] = ids.emplace(row[i], static_cast<int>(ids.size()));
        if (inserted) ds.class_names.push_back(row[i]);
        ds.labels[r] = it->second;
        continue;
      }
      try {
        std::size_t used = 0;
        const double v = std::stod(row[i], &used);
        if (used != row[i].size() || !std::isfinite(v)) throw std::invalid_argument("");
        ds.features(r, col++) = v;
      } catch (const std::exception&) {
        throw FormatError(path + ": row " + std::to_string(line) + ", column " +
                          std::to_string(i + 1) + ": cannot parse '" + row[i] + "'");
      }
    }
  }
  ds.classes = static_cast<int>(ids.size());
  return ds;
}

// Random SPD matrix A = Q diag(lambda) Q^T with lambda log-spaced on
// [1, condition_number], plus a random minimizer theta*.
struct Quadratic {
  Tensor A;
  std::vector<double> theta_star;
};

inline Tensor random_orthogonal(std::size_t n, SeededRng& rng) {
  Tensor q = gaussian_fill(rng, {n, n}, 0.0, 1.0);
  // Modified Gram-Schmidt on the columns.
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= dot * q(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= norm;
  }
  return q;
}

inline Quadratic synth_quadratic(std::size_t dim, double condition_number, std::uint64_t seed) {
  if (dim == 0) throw ValidationError("synth_quadratic: dim must be positive");
  if (!(condition_number >= 1.0))
    throw ValidationError("synth_quadratic: condition number must be >= 1");
  SeededRng rng(seed);
  const Tensor q = random_orthogonal(dim, rng);
  std::vector<double> eig(dim, 1.0);
  for (std::size_t i = 0; i < dim && dim > 1; ++i)
    eig[i] = std::pow(condition_number, static_cast<double>(i) / static_cast<double>(dim - 1));
  Tensor a({dim, dim});
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = r; c < dim; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) s += q(r, k) * eig[k] * q(c, k);
      a(r, c) = a(c, r) = s;
    }
  Quadratic out{std::move(a), std::vector<double>(dim)};
  for (double& v : out.theta_star) v = rng.normal();
  return out;
}

// Index batches for one epoch. With shuffle the order is a permutation drawn
// from a stream derived from (seed, epoch); the final short batch is kept.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                        std::uint64_t seed, bool shuffle,
                                                        std::uint64_t epoch = 0) {
  if (batch_size == 0) throw ValidationError("batch_iter: batch size must be positive");
  if (n == 0) throw ValidationError("batch_iter: empty dataset");
  if (batch_size > n) throw ValidationError("batch_iter: batch size exceeds dataset size");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle) {
    SeededRng rng = SeededRng(seed).fork(epoch);
    order = permutation(rng, n);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  return batches;
}

}  // namespace kronfisher
