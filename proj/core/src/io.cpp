#include "bamifun/io.hpp"

#include "bamifun/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

namespace bamifun {
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormatTag = "bamifun-archive-v1";

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& text, const std::string& where) {
  const char* begin = text.data();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (text.empty() || end != begin + text.size()) throw InvalidInput(where + ": cannot parse '" + text + "' as a number");
  return v;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<unsigned char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t get_u64(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 8> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 8)) throw InvalidInput("truncated file " + path.string());
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return in;
}

std::string draw_name(std::size_t s, ArchiveFormat format) {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "draw_%04zu.%s", s, format == ArchiveFormat::binary ? "bin" : "csv");
  return buf.data();
}

}  // namespace

ObservedFunctionalMatrix LongFormatData::as_matrix() const {
  if (multiway()) throw InvalidInput("input has a feature column; use the multiway commands");
  return ObservedFunctionalMatrix{values, mask, grid};
}

ObservedFunctionalTensor LongFormatData::as_tensor() const {
  const Eigen::Index J = feature_count();
  return ObservedFunctionalTensor{Tensor3::from_mode1(values, J, static_cast<Eigen::Index>(times.size())), mask, grid};
}

LongFormatData parse_long_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (trim(line).empty()) continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw InvalidInput("CSV input is empty");
  for (auto& h : header) std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });

  const std::vector<std::string> single{"subject", "time", "value"};
  const std::vector<std::string> multi{"subject", "feature", "time", "value"};
  const bool multiway = header == multi;
  if (!multiway && header != single) {
    throw InvalidInput("CSV header must be 'subject,time,value' or 'subject,feature,time,value'");
  }

  struct Row {
    std::size_t subject, feature;
    double time, value;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::vector<std::string> subjects, features;
  std::unordered_map<std::string, std::size_t> subject_index, feature_index;
  auto intern = [](const std::string& key, std::vector<std::string>& names,
                   std::unordered_map<std::string, std::size_t>& index) {
    const auto [it, inserted] = index.emplace(key, names.size());
    if (inserted) names.push_back(key);
    return it->second;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = "line " + std::to_string(line_no);
    if (fields.size() != header.size()) throw InvalidInput(where + ": expected " + std::to_string(header.size()) + " fields");
    const std::string& value_text = fields.back();
    if (value_text.empty() || value_text == "NA" || value_text == "NaN" || value_text == "nan") continue;
    Row r{};
    r.subject = intern(fields[0], subjects, subject_index);
    r.feature = multiway ? intern(fields[1], features, feature_index) : 0;
    r.time = parse_double(fields[multiway ? 2 : 1], where);
    r.value = parse_double(value_text, where);
    if (!std::isfinite(r.time) || !std::isfinite(r.value)) throw InvalidInput(where + ": non-finite time or value");
    r.line = line_no;
    rows.push_back(r);
  }
  if (rows.empty()) throw InvalidInput("CSV input has no observed values");

  std::vector<double> times;
  times.reserve(rows.size());
  for (const auto& r : rows) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() < 2) throw InvalidInput("CSV input needs at least two distinct time points");

  LongFormatData out;
  out.subjects = std::move(subjects);
  out.features = std::move(features);
  out.times = times;
  const double lo = times.front(), span = times.back() - times.front();
  std::vector<double> scaled(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) scaled[k] = (times[k] - lo) / span;
  scaled.back() = 1.0;
  out.grid = TimeGrid(std::move(scaled));

  const auto N = static_cast<Eigen::Index>(out.subjects.size());
  const Eigen::Index J = out.feature_count();
  const auto K = static_cast<Eigen::Index>(times.size());
  out.values = Eigen::MatrixXd::Constant(N, J * K, std::numeric_limits<double>::quiet_NaN());
  out.mask = MaskMatrix::Zero(N, J * K);
  for (const auto& r : rows) {
    const auto k = static_cast<Eigen::Index>(std::lower_bound(times.begin(), times.end(), r.time) - times.begin());
    const auto i = static_cast<Eigen::Index>(r.subject);
    const Eigen::Index c = static_cast<Eigen::Index>(r.feature) + J * k;
    if (out.mask(i, c)) {
      throw InvalidInput("line " + std::to_string(r.line) + ": duplicate observation for subject '" +
                         out.subjects[r.subject] + "'");
    }
    out.values(i, c) = r.value;
    out.mask(i, c) = 1;
  }
  return out;
}

LongFormatData read_long_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  return parse_long_csv(in);
}

void write_long_csv(const fs::path& path, const Eigen::MatrixXd& values, const MaskMatrix& mask, Eigen::Index J,
                    const std::vector<double>& times, const std::vector<std::string>& subjects,
                    const std::vector<std::string>& features) {
  const Eigen::Index N = values.rows();
  const auto K = static_cast<Eigen::Index>(times.size());
  if (values.cols() != J * K || mask.rows() != N || mask.cols() != J * K) throw InvalidInput("write_long_csv: shape mismatch");
  std::ofstream out = open_out(path);
  const bool multiway = J > 1 || !features.empty();
  out << (multiway ? "subject,feature,time,value\n" : "subject,time,value\n");
  for (Eigen::Index i = 0; i < N; ++i) {
    const std::string sid = subjects.empty() ? std::to_string(i + 1) : subjects[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < J; ++j) {
      const std::string fid = features.empty() ? std::to_string(j + 1) : features[static_cast<std::size_t>(j)];
      for (Eigen::Index k = 0; k < K; ++k) {
        const Eigen::Index c = j + J * k;
        if (!mask(i, c)) continue;
        out << sid << ',';
        if (multiway) out << fid << ',';
        out << format_double(times[static_cast<std::size_t>(k)]) << ',' << format_double(values(i, c)) << '\n';
      }
    }
  }
  if (!out) throw InvalidInput("failed writing " + path.string());
}

ArchiveFormat parse_archive_format(const std::string& name) {
  if (name == "bin" || name == "binary") return ArchiveFormat::binary;
  if (name == "csv") return ArchiveFormat::csv;
  throw InvalidConfiguration("unknown archive format '" + name + "' (expected bin or csv)");
}

void write_array(const fs::path& path, const Eigen::MatrixXd& values, Eigen::Index J, ArchiveFormat format) {
  const Eigen::Index N = values.rows();
  if (J < 1 || values.cols() % J != 0) throw InvalidInput("write_array: column count is not a multiple of J");
  const Eigen::Index K = values.cols() / J;
  if (format == ArchiveFormat::binary) {
    std::ofstream out = open_out(path, std::ios::out | std::ios::binary);
    put_u64(out, static_cast<std::uint64_t>(N));
    put_u64(out, static_cast<std::uint64_t>(J));
    put_u64(out, static_cast<std::uint64_t>(K));
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = 0; k < K; ++k) {
          std::uint64_t bits = 0;
          const double v = values(i, j + J * k);
          std::memcpy(&bits, &v, sizeof bits);
          put_u64(out, bits);
        }
    if (!out) throw InvalidInput("failed writing " + path.string());
    return;
  }
  std::ofstream out = open_out(path);
  out << "# " << N << ' ' << J << ' ' << K << '\n';
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < J; ++j) {
      for (Eigen::Index k = 0; k < K; ++k) {
        if (k > 0) out << ',';
        out << format_double(values(i, j + J * k));
      }
      out << '\n';
    }
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Eigen::MatrixXd read_array(const fs::path& path, Eigen::Index* J_out) {
  if (path.extension() == ".bin") {
    std::ifstream in = open_in(path, std::ios::in | std::ios::binary);
    const auto N = static_cast<Eigen::Index>(get_u64(in, path));
    const auto J = static_cast<Eigen::Index>(get_u64(in, path));
    const auto K = static_cast<Eigen::Index>(get_u64(in, path));
    Eigen::MatrixXd values(N, J * K);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < J; ++j)
        for (Eigen::Index k = 0; k < K; ++k) {
          const std::uint64_t bits = get_u64(in, path);
          double v = 0.0;
          std::memcpy(&v, &bits, sizeof v);
          values(i, j + J * k) = v;
        }
    if (J_out) *J_out = J;
    return values;
  }
  std::ifstream in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw InvalidInput(path.string() + ": missing '# N J K' line");
  std::istringstream dims(line.substr(2));
  Eigen::Index N = 0, J = 0, K = 0;
  if (!(dims >> N >> J >> K)) throw InvalidInput(path.string() + ": malformed dimension line");
  Eigen::MatrixXd values(N, J * K);
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < J; ++j) {
      if (!std::getline(in, line)) throw InvalidInput("truncated file " + path.string());
      const auto fields = split_csv(line);
      if (static_cast<Eigen::Index>(fields.size()) != K) throw InvalidInput(path.string() + ": wrong number of values");
      for (Eigen::Index k = 0; k < K; ++k) values(i, j + J * k) = parse_double(fields[static_cast<std::size_t>(k)], path.string());
    }
  if (J_out) *J_out = J;
  return values;
}

void write_archive(const DrawArchive& archive, const fs::path& dir, ArchiveFormat format) {
  fs::create_directories(dir);
  const char* ext = format == ArchiveFormat::binary ? "bin" : "csv";
  {
    std::ofstream m = open_out(dir / "manifest.txt");
    m << "format=" << kFormatTag << '\n'
      << "N=" << archive.subjects << '\n'
      << "J=" << archive.features << '\n'
      << "K=" << archive.grid_size << '\n'
      << "R=" << archive.rank << '\n'
      << "L=" << archive.basis_size << '\n'
      << "S=" << archive.size() << '\n'
      << "burn_in=" << archive.burn_in << '\n'
      << "thinning=" << archive.thinning << '\n'
      << "seed=" << archive.seed << '\n'
      << "storage=" << ext << '\n';
  }
  for (std::size_t s = 0; s < archive.size(); ++s) {
    write_array(dir / draw_name(s, format), archive.datasets[s], archive.features, format);
  }
  write_array(dir / (std::string("mask.") + ext), archive.mask.cast<double>(), archive.features, format);
  std::ofstream p = open_out(dir / "params.csv");
  p << "draw,noise_var,smooth_var\n";
  for (std::size_t s = 0; s < archive.params.size(); ++s) {
    p << s << ',' << format_double(archive.params[s].noise_var) << ','
      << format_double(archive.params[s].smooth_var) << '\n';
  }
}

DrawArchive read_archive(const fs::path& dir) {
  std::map<std::string, std::string> kv;
  {
    std::ifstream m = open_in(dir / "manifest.txt");
    std::string line;
    while (std::getline(m, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
  }
  if (kv["format"] != kFormatTag) throw InvalidInput(dir.string() + ": not a " + std::string(kFormatTag) + " archive");
  auto integer = [&](const std::string& key) -> long long {
    const auto it = kv.find(key);
    if (it == kv.end()) throw InvalidInput("manifest is missing '" + key + "'");
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || ptr != it->second.data() + it->second.size()) {
      throw InvalidInput("manifest key '" + key + "' is not an integer");
    }
    return v;
  };
  const ArchiveFormat format = parse_archive_format(kv["storage"]);
  const char* ext = format == ArchiveFormat::binary ? "bin" : "csv";

  DrawArchive a;
  a.subjects = integer("N");
  a.features = integer("J");
  a.grid_size = integer("K");
  a.rank = static_cast<int>(integer("R"));
  a.basis_size = static_cast<int>(integer("L"));
  a.burn_in = static_cast<int>(integer("burn_in"));
  a.thinning = static_cast<int>(integer("thinning"));
  a.seed = std::stoull(kv["seed"]);
  const auto S = static_cast<std::size_t>(integer("S"));
  a.datasets.reserve(S);
  for (std::size_t s = 0; s < S; ++s) {
    Eigen::MatrixXd d = read_array(dir / draw_name(s, format));
    if (d.rows() != a.subjects || d.cols() != a.features * a.grid_size) {
      throw InvalidInput(dir.string() + ": draw " + std::to_string(s) + " has unexpected dimensions");
    }
    a.datasets.push_back(std::move(d));
  }
  a.mask = read_array(dir / (std::string("mask.") + ext)).cast<std::uint8_t>();

  std::ifstream p = open_in(dir / "params.csv");
  std::string line;
  std::getline(p, line);
  while (std::getline(p, line)) {
    const auto fields = split_csv(line);
    if (fields.size() != 3) continue;
    ParameterDraw draw;
    draw.noise_var = parse_double(fields[1], "params.csv");
    draw.smooth_var = parse_double(fields[2], "params.csv");
    a.params.push_back(std::move(draw));
  }
  return a;
}

}  // namespace bamifun
