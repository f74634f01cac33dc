#include <cstring>
#include <fstream>
#include <stdexcept>

#include "pbsdet/net.hpp"

namespace pbsdet {

namespace {

constexpr uint32_t kFormatVersion = 1;

template <typename T>
constexpr uint32_t dtype_tag() {
  return sizeof(T) == 4 ? 1u : 2u;
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff),
                        (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("weight file truncated while reading " + what);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

template <typename T>
void put_values(std::ostream& os, const std::vector<T>& v) {
  // Little-endian raw values; x86/ARM native, so a straight write suffices.
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
}

template <typename T>
void get_values(std::istream& is, std::vector<T>& v, const std::string& name) {
  if (!is.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(T))))
    throw std::runtime_error("weight file truncated in values of " + name);
}

struct Entry {
  std::string name;
  uint32_t dtype = 0;
  std::vector<uint32_t> dims;
  std::streampos data_pos;
  size_t count = 0;
};

template <typename T>
std::vector<Entry> read_index(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PBSW", 4) != 0)
    throw std::runtime_error("weight file: bad magic, expected PBSW");
  const uint32_t version = get_u32(is, "version");
  if (version != kFormatVersion)
    throw std::runtime_error("weight file: unsupported format version " +
                             std::to_string(version));
  const uint32_t n = get_u32(is, "entry count");
  std::vector<Entry> entries;
  entries.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    Entry e;
    const uint32_t name_len = get_u32(is, "name length");
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw std::runtime_error("weight file truncated in entry name");
    e.dtype = get_u32(is, e.name + " dtype");
    if (e.dtype != dtype_tag<T>())
      throw std::runtime_error("weight file: dtype mismatch for " + e.name);
    const uint32_t rank = get_u32(is, e.name + " rank");
    e.count = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      e.dims.push_back(get_u32(is, e.name + " dim"));
      e.count *= e.dims.back();
    }
    e.data_pos = is.tellg();
    is.seekg(std::streamoff(e.count * sizeof(T)), std::ios::cur);
    if (!is) throw std::runtime_error("weight file truncated in values of " + e.name);
    entries.push_back(std::move(e));
  }
  // must be at EOF now
  is.peek();
  if (!is.eof()) throw std::runtime_error("weight file: trailing bytes after entries");
  is.clear();
  return entries;
}

const Entry& find_entry(const std::vector<Entry>& entries, const std::string& name) {
  for (const Entry& e : entries)
    if (e.name == name) return e;
  throw std::runtime_error("weight file: missing entry " + name);
}

}  // namespace

template <typename T>
void save_weights(DetectorNet<T>& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write("PBSW", 4);
  put_u32(os, kFormatVersion);
  auto params = net.params();
  put_u32(os, uint32_t(params.size()));
  for (const auto& p : params) {
    put_u32(os, uint32_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    put_u32(os, dtype_tag<T>());
    put_u32(os, uint32_t(p.dims.size()));
    for (uint32_t d : p.dims) put_u32(os, d);
    put_values(os, *p.value);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

template <typename T>
DetectorNet<T> load_weights(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weight file: " + path);
  const std::vector<Entry> entries = read_index<T>(is);

  // Recover the architecture from entry names and dims: backbone<i>_s<j>
  // carries the stride in its name, channel counts come from weight shapes.
  NetArch arch;
  arch.channels.clear();
  arch.strides.clear();
  for (size_t i = 0;; ++i) {
    std::string prefix = "backbone" + std::to_string(i) + "_s";
    const Entry* weight = nullptr;
    int stride = 0;
    for (const Entry& e : entries) {
      if (e.name.rfind(prefix, 0) == 0 && e.name.size() > prefix.size() &&
          e.name.substr(prefix.size() + 1) == ".weight") {
        weight = &e;
        stride = e.name[prefix.size()] - '0';
      }
    }
    if (!weight) break;
    if (weight->dims.size() != 4)
      throw std::runtime_error("weight file: bad rank for " + weight->name);
    if (i == 0) arch.in_channels = int(weight->dims[1]);
    arch.channels.push_back(int(weight->dims[0]));
    arch.strides.push_back(stride);
  }
  if (arch.channels.empty())
    throw std::runtime_error("weight file: no backbone entries found");
  const Entry& reg_w = find_entry(entries, "reg.weight");
  const Entry& cls_w = find_entry(entries, "cls.weight");
  if (reg_w.dims.size() != 4 || reg_w.dims[0] % 4 != 0)
    throw std::runtime_error("weight file: bad reg head shape");
  arch.num_scales = int(reg_w.dims[0]) / 4;
  if (int(cls_w.dims[0]) == arch.num_scales)
    arch.head = HeadType::PreciseSigmoid;
  else if (int(cls_w.dims[0]) == 2 * arch.num_scales)
    arch.head = HeadType::Softmax;
  else
    throw std::runtime_error("weight file: cls head channels fit neither head type");
  arch.width = 1.0;

  DetectorNet<T> net(arch, /*seed=*/0);
  load_weights_into(net, path);
  return net;
}

template <typename T>
void load_weights_into(DetectorNet<T>& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open weight file: " + path);
  const std::vector<Entry> entries = read_index<T>(is);
  auto params = net.params();
  if (entries.size() != params.size())
    throw std::runtime_error("weight file: entry count mismatch");
  for (auto& p : params) {
    const Entry& e = find_entry(entries, p.name);
    if (e.dims != p.dims)
      throw std::runtime_error("weight file: shape mismatch for layer " + p.name);
    is.seekg(e.data_pos);
    get_values(is, *p.value, p.name);
  }
}

template void save_weights<float>(DetectorNet<float>&, const std::string&);
template void save_weights<double>(DetectorNet<double>&, const std::string&);
template DetectorNet<float> load_weights<float>(const std::string&);
template DetectorNet<double> load_weights<double>(const std::string&);
template void load_weights_into<float>(DetectorNet<float>&, const std::string&);
template void load_weights_into<double>(DetectorNet<double>&, const std::string&);

}  // namespace pbsdet
