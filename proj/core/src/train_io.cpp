#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>

#include "aeq/train.hpp"

namespace aeq {

namespace {

std::string shortest(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t p = 0;
  while (true) {
    const std::size_t q = line.find(',', p);
    out.push_back(line.substr(p, q == std::string_view::npos ? std::string_view::npos : q - p));
    if (q == std::string_view::npos) break;
    p = q + 1;
  }
  return out;
}

template <class T>
T field(std::string_view text, std::size_t line, const char* name) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ParseError(line, std::string("bad ") + name + " field '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::string s;
  s += std::to_string(r.iteration);
  s += ',';
  s += std::to_string(r.epoch);
  s += ',';
  s += r.split;
  s += ',';
  s += shortest(r.loss);
  s += ',';
  s += shortest(r.error_rate);
  s += ',';
  s += std::to_string(r.skipped_samples);
  s += ',';
  if (r.wall_ms) s += shortest(*r.wall_ms);
  return s;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRow> rows;
  std::size_t pos = 0, line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header) {
      if (line != kMetricsHeader) throw ParseError(line_no, "metrics header mismatch");
      header = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 7) throw ParseError(line_no, "expected 7 fields, got " + std::to_string(f.size()));
    MetricsRow r;
    r.iteration = field<std::size_t>(f[0], line_no, "iteration");
    r.epoch = field<std::size_t>(f[1], line_no, "epoch");
    if (f[2] != "train" && f[2] != "test") throw ParseError(line_no, "split must be train or test");
    r.split = std::string(f[2]);
    r.loss = field<double>(f[3], line_no, "loss");
    r.error_rate = field<double>(f[4], line_no, "error_rate");
    if (!(r.error_rate >= 0.0 && r.error_rate <= 1.0)) throw ParseError(line_no, "error_rate outside [0, 1]");
    r.skipped_samples = field<std::size_t>(f[5], line_no, "skipped_samples");
    if (!f[6].empty()) r.wall_ms = field<double>(f[6], line_no, "wall_ms");
    rows.push_back(std::move(r));
  }
  if (!header) throw ParseError(1, "missing metrics header");
  return rows;
}

MetricsWriter::MetricsWriter(std::ostream& out) : out_(out) { out_ << kMetricsHeader << '\n' << std::flush; }

void MetricsWriter::write(const MetricsRow& row) { out_ << format_metrics_row(row) << '\n' << std::flush; }

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("error writing " + path.string());
}

std::filesystem::path sidecar(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".arch";
  return p;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Netlist& net, const ArchSpec& spec) {
  write_text_file(path, serialize_netlist(net));
  write_text_file(sidecar(path), serialize_arch(spec));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<ArchSpec> spec_override) {
  Netlist net = parse_netlist(read_text_file(path));
  ArchSpec spec = spec_override ? *spec_override : parse_arch(read_text_file(sidecar(path)));
  recover_layout(net, spec);
  return {std::move(net), std::move(spec)};
}

}  // namespace aeq
