#pragma once

#include "bamifun/multiway_gibbs.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace bamifun {

/// Long-format table (`subject,time,value` or `subject,feature,time,value`) laid out on a shared
/// sorted grid. Subjects and features keep their order of first appearance.
struct LongFormatData {
  std::vector<std::string> subjects;
  std::vector<std::string> features;  ///< empty for single-level input
  std::vector<double> times;          ///< distinct input times, ascending
  TimeGrid grid;                      ///< times mapped affinely onto [0, 1]
  Eigen::MatrixXd values;             ///< N x (J K), mode-1 layout; NaN where unobserved
  MaskMatrix mask;

  bool multiway() const { return !features.empty(); }
  Eigen::Index feature_count() const { return multiway() ? static_cast<Eigen::Index>(features.size()) : 1; }
  ObservedFunctionalMatrix as_matrix() const;
  ObservedFunctionalTensor as_tensor() const;
};

/// Header required. Blank lines are skipped; a value of NA or an empty value is treated as absent.
LongFormatData parse_long_csv(std::istream& in);
LongFormatData read_long_csv(const std::filesystem::path& path);

/// Observed cells of an N x (J K) matrix written back in long format. `times` has K entries;
/// empty id vectors produce 1-based numeric ids.
void write_long_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values, const MaskMatrix& mask,
                    Eigen::Index J, const std::vector<double>& times, const std::vector<std::string>& subjects = {},
                    const std::vector<std::string>& features = {});

enum class ArchiveFormat { binary, csv };

ArchiveFormat parse_archive_format(const std::string& name);

/// Directory layout:
///   manifest.txt      key=value lines (format=bamifun-archive-v1, N, J, K, R, L, S, burn_in,
///                     thinning, seed, storage=bin|csv)
///   draw_0000.bin     3 x uint64 LE header (N, J, K), then N J K float64 LE values in row-major
///                     (i, j, k) order, k fastest
///   draw_0000.csv     "# N J K" line, then N J lines (i outer, j inner) of K comma-separated
///                     values printed with 17 significant digits
///   mask.bin|csv      same layouts holding 0/1
///   params.csv        draw,noise_var,smooth_var
void write_archive(const DrawArchive& archive, const std::filesystem::path& dir, ArchiveFormat format);
DrawArchive read_archive(const std::filesystem::path& dir);

/// Single N x (J K) array in either draw layout.
void write_array(const std::filesystem::path& path, const Eigen::MatrixXd& values, Eigen::Index J,
                 ArchiveFormat format);
Eigen::MatrixXd read_array(const std::filesystem::path& path, Eigen::Index* J = nullptr);

}  // namespace bamifun
