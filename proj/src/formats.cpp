#include "contraspeech/formats.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace contraspeech {

namespace fs = std::filesystem;

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void str(const std::string& s) { buf_ += s; }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void floats(std::span<const float> values) {
    for (float f : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      le<std::uint32_t>(bits);
    }
  }
  void save(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
  }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(in), {});
  }
  void need(std::size_t n, const char* what) const {
    require(pos_ + n <= buf_.size(), ErrorKind::Format,
            path_.string() + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  void floats(std::span<float> out, const char* what) {
    need(out.size() * 4, what);
    for (float& f : out) {
      const auto bits = le<std::uint32_t>(what);
      std::memcpy(&f, &bits, 4);
    }
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::string buf_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, const char* magic, std::uint16_t version) {
  const std::string m = r.str(4, "magic");
  require(m == magic, ErrorKind::Format, r.path().string() + ": bad magic (expected " + magic + ")");
  const auto v = r.le<std::uint16_t>("version");
  require(v == version, ErrorKind::Format,
          r.path().string() + ": unsupported format version " + std::to_string(v) + " (expected " +
              std::to_string(version) + ")");
}

}  // namespace

void Checkpoint::set(const std::string& key, const std::string& value) {
  require(key.find_first_of("=\n") == std::string::npos && value.find('\n') == std::string::npos, ErrorKind::Contract,
          "metadata key/value may not contain '=' (key) or newlines: " + key);
  for (auto& [k, v] : meta)
    if (k == key) {
      v = value;
      return;
    }
  meta.emplace_back(key, value);
}

bool Checkpoint::has(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return true;
  return false;
}

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta)
    if (k == key) return v;
  fail(ErrorKind::Format, "checkpoint metadata lacks '" + key + "'");
}

Tensor Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail(ErrorKind::Format, "checkpoint has no tensor '" + name + "'");
}

void Checkpoint::add_parameters(const ParameterSet& params) {
  for (const auto& [name, t] : params.items()) tensors.emplace_back(name, detach(t));
}

void Checkpoint::load_parameters(const ParameterSet& params, const std::string& prefix) const {
  std::size_t matched = 0;
  for (const auto& [name, t] : params.items()) {
    const Tensor src = tensor(name);
    require(src.shape() == t.shape(), ErrorKind::Contract,
            "tensor '" + name + "' has shape " + shape_string(src.shape()) + " in the checkpoint but " +
                shape_string(t.shape()) + " in the model");
    Tensor dst = t;  // shares storage with the model's parameter
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    ++matched;
  }
  std::size_t candidates = 0;
  for (const auto& [n, _] : tensors) candidates += n.rfind(prefix, 0) == 0;
  require(candidates == matched, ErrorKind::Contract,
          "checkpoint holds " + std::to_string(candidates) + " tensors under '" + prefix + "' but the model uses " +
              std::to_string(matched));
}

void write_checkpoint(const fs::path& path, const Checkpoint& ck) {
  Writer w;
  w.str("CSPK");
  w.le<std::uint16_t>(Checkpoint::kVersion);
  std::string meta;
  for (const auto& [k, v] : ck.meta) meta += k + "=" + v + "\n";
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.str(meta);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.le<std::uint64_t>(d);
    w.le<std::uint64_t>(t.numel());
    w.floats(t.data());
  }
  w.save(path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  Reader r(path);
  check_magic(r, "CSPK", Checkpoint::kVersion);
  Checkpoint ck;
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  std::istringstream meta(r.str(meta_len, "metadata"));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Format, path.string() + ": malformed metadata line '" + line + "'");
    ck.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    const auto rank = r.le<std::uint8_t>("tensor rank");
    Shape shape(rank);
    std::uint64_t product = 1;
    for (auto& d : shape) {
      d = r.le<std::uint64_t>("tensor dims");
      product *= d;
    }
    const auto n = r.le<std::uint64_t>("tensor element count");
    require(n == product, ErrorKind::Format,
            path.string() + ": tensor '" + name + "' declares " + std::to_string(n) + " elements for shape " +
                shape_string(shape));
    require(n * 4 <= r.remaining(), ErrorKind::Format, path.string() + ": truncated payload for '" + name + "'");
    Tensor t = Tensor::zeros(shape);
    r.floats(t.data(), "tensor payload");
    ck.tensors.emplace_back(std::move(name), t);
  }
  require(r.remaining() == 0, ErrorKind::Format, path.string() + ": trailing bytes after the last tensor");
  return ck;
}

void write_features(const fs::path& path, const FeatureFile& file) {
  Writer w;
  w.str("CSFT");
  w.le<std::uint16_t>(FeatureFile::kVersion);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(file.id.size()));
  w.str(file.id);
  w.le<std::uint64_t>(static_cast<std::uint64_t>(file.values.rows()));
  w.le<std::uint64_t>(static_cast<std::uint64_t>(file.values.cols()));
  w.floats({file.values.data(), static_cast<std::size_t>(file.values.size())});
  w.save(path);
}

FeatureFile read_features(const fs::path& path) {
  Reader r(path);
  check_magic(r, "CSFT", FeatureFile::kVersion);
  FeatureFile f;
  const auto id_len = r.le<std::uint16_t>("id length");
  f.id = r.str(id_len, "id");
  const auto rows = r.le<std::uint64_t>("rows");
  const auto cols = r.le<std::uint64_t>("cols");
  require(r.remaining() == rows * cols * 4, ErrorKind::Format,
          path.string() + ": expected " + std::to_string(rows * cols * 4) + " payload bytes for " + std::to_string(rows) +
              " x " + std::to_string(cols) + " but found " + std::to_string(r.remaining()));
  f.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.floats({f.values.data(), static_cast<std::size_t>(f.values.size())}, "features");
  return f;
}

void write_feature_index(const fs::path& path, const FeatureIndex& index) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  out << "#rate\t" << index.rate << '\n';
  for (const auto& e : index.entries) {
    std::error_code ec;
    fs::path p = fs::relative(e.path, base, ec);
    if (ec || p.empty()) p = e.path;
    out << e.id << '\t' << p.generic_string() << '\t' << e.rows << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

FeatureIndex read_feature_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open feature index " + path.string());
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  FeatureIndex index;
  bool have_rate = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (line.rfind("#rate\t", 0) == 0) {
      try {
        index.rate = std::stod(line.substr(6));
      } catch (const std::exception&) {
        fail(ErrorKind::Format, where + "bad rate");
      }
      have_rate = true;
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream fields(line);
    FeatureIndex::Entry e;
    std::string p, rows;
    if (!std::getline(fields, e.id, '\t') || !std::getline(fields, p, '\t') || !std::getline(fields, rows))
      fail(ErrorKind::Format, where + "expected id<TAB>path<TAB>rows");
    e.path = fs::path(p).is_absolute() ? fs::path(p) : base / p;
    try {
      e.rows = std::stoul(rows);
    } catch (const std::exception&) {
      fail(ErrorKind::Format, where + "bad row count");
    }
    index.entries.push_back(std::move(e));
  }
  require(have_rate, ErrorKind::Format, path.string() + ": missing #rate header");
  return index;
}

}  // namespace contraspeech
