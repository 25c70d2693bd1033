#include "drophmc/sample_io.hpp"

#include "drophmc/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace drophmc {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void text(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* data, std::size_t n) { out_.append(data, n); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string text() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void expect(const char* data, std::size_t n) {
    need(n);
    if (std::memcmp(bytes_.data() + pos_, data, n) != 0) throw DataError("not a drophmc sample file (bad magic)");
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("sample file is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= std::uint64_t{static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])} << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string encode_stats(const ChainStats& s) {
  std::ostringstream out;
  out.precision(17);
  out << "iterations_planned=" << s.iterations_planned << '\n'
      << "iterations_run=" << s.iterations_run << '\n'
      << "proposals=" << s.proposals << '\n'
      << "accepted=" << s.accepted << '\n'
      << "mean_accept_prob=" << s.mean_accept_prob << '\n'
      << "diverged=" << (s.diverged ? 1 : 0) << '\n'
      << "divergence_message=" << s.divergence_message << '\n';
  return out.str();
}

ChainStats decode_stats(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const char* key) -> std::string {
    const auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("sample file statistics lack '") + key + "'");
    return it->second;
  };
  ChainStats s;
  try {
    s.iterations_planned = std::stoll(num("iterations_planned"));
    s.iterations_run = std::stoll(num("iterations_run"));
    s.proposals = std::stoll(num("proposals"));
    s.accepted = std::stoll(num("accepted"));
    s.mean_accept_prob = std::stod(num("mean_accept_prob"));
    s.diverged = num("diverged") == "1";
  } catch (const std::logic_error&) {
    throw DataError("sample file statistics are malformed");
  }
  s.divergence_message = kv["divergence_message"];
  return s;
}

}  // namespace

std::string encode_samples(const PosteriorSamples& samples, const std::string& config_echo) {
  Writer w;
  w.raw(kSampleMagic, sizeof kSampleMagic);
  w.u32(kSampleFormatVersion);
  w.u32(static_cast<std::uint32_t>(samples.classes));
  w.u32(static_cast<std::uint32_t>(samples.features));
  w.text(std::string(to_string(samples.settings.algorithm)));
  w.u64(samples.settings.chain.seed);
  w.text(config_echo);
  w.text(encode_stats(samples.stats));
  w.u64(samples.draws.size());
  const Index params = samples.classes * samples.features + samples.classes;
  for (std::size_t i = 0; i < samples.draws.size(); ++i) {
    if (samples.draws[i].size() != params) throw DimensionError("draw has the wrong parameter count");
    w.u64(static_cast<std::uint64_t>(samples.iterations[i]));
    for (Index j = 0; j < params; ++j) w.f64(samples.draws[i](j));
  }
  return w.take();
}

SampleFile decode_samples(const std::string& bytes) {
  Reader r(bytes);
  r.expect(kSampleMagic, sizeof kSampleMagic);
  const std::uint32_t version = r.u32();
  if (version != kSampleFormatVersion) {
    throw DataError("unsupported sample file version " + std::to_string(version));
  }
  SampleFile file;
  PosteriorSamples& s = file.samples;
  s.classes = r.u32();
  s.features = r.u32();
  if (s.classes < 2 || s.features < 1) throw DataError("sample file declares an invalid shape");
  s.settings.algorithm = parse_algorithm(r.text());
  s.settings.chain.seed = r.u64();
  file.config_echo = r.text();
  s.stats = decode_stats(r.text());
  const std::uint64_t count = r.u64();
  const Index params = s.classes * s.features + s.classes;
  const std::uint64_t record = 8 + 8 * static_cast<std::uint64_t>(params);
  if (count > r.remaining() / record) throw DataError("sample file is truncated");
  s.iterations.reserve(count);
  s.draws.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    s.iterations.push_back(static_cast<std::int64_t>(r.u64()));
    Eigen::VectorXd draw(params);
    for (Index j = 0; j < params; ++j) draw(j) = r.f64();
    s.draws.push_back(std::move(draw));
  }
  if (r.remaining() != 0) throw DataError("sample file has trailing bytes");
  return file;
}

void write_samples(const std::filesystem::path& path, const PosteriorSamples& samples,
                   const std::string& config_echo) {
  const std::string bytes = encode_samples(samples, config_echo);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

SampleFile read_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_samples(buf.str());
}

}  // namespace drophmc
