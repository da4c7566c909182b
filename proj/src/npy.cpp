#include "jbot/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace jbot::npy {

namespace {

std::size_t numel(const std::vector<long>& shape) {
  std::size_t n = 1;
  for (long d : shape) {
    if (d < 0) throw std::runtime_error("npy: negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_tuple(const std::vector<long>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << shape[i] << ", ";
  if (shape.size() > 1) {
    std::string s = os.str();
    s.resize(s.size() - 2);  // drop trailing ", "
    return s + ")";
  }
  return os.str() + ")";  // "(n, )" and "( )" are fine for numpy, but match its writer:
}

}  // namespace

void save_raw(const std::string& path, const std::string& descr, const std::vector<long>& shape,
              const void* data, std::size_t elem_size) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': ";
  if (shape.size() == 1) {
    dict << "(" << shape[0] << ",)";
  } else {
    dict << shape_tuple(shape);
  }
  dict << ", }";
  std::string header = dict.str();
  // pad with spaces so magic(6)+version(2)+len(2)+header is 64-byte aligned, newline-terminated
  std::size_t unpadded = 6 + 2 + 2 + header.size() + 1;
  std::size_t pad = (64 - unpadded % 64) % 64;
  header.append(pad, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw std::runtime_error("npy: header too large for v1.0");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("npy: cannot open for writing: " + path);
  const char magic[] = "\x93NUMPY\x01\x00";
  out.write(magic, 8);
  std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&hlen), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(numel(shape) * elem_size));
  if (!out) throw std::runtime_error("npy: write failed: " + path);
}

Header load_raw(const std::string& path, std::vector<unsigned char>& payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("npy: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
    throw std::runtime_error("npy: bad magic in " + path);
  int major = magic[6], minor = magic[7];
  std::uint32_t hlen = 0;
  if (major == 1) {
    std::uint16_t h16 = 0;
    in.read(reinterpret_cast<char*>(&h16), 2);
    hlen = h16;
  } else if (major == 2) {
    in.read(reinterpret_cast<char*>(&hlen), 4);
  } else {
    throw std::runtime_error("npy: unsupported version " + std::to_string(major) + "." +
                             std::to_string(minor) + " in " + path);
  }
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  if (!in) throw std::runtime_error("npy: truncated header in " + path);

  Header h;
  auto find_value = [&](const std::string& key) -> std::string {
    auto pos = header.find("'" + key + "'");
    if (pos == std::string::npos) throw std::runtime_error("npy: missing key " + key);
    pos = header.find(':', pos);
    return header.substr(pos + 1);
  };
  {
    std::string v = find_value("descr");
    auto q0 = v.find('\'');
    auto q1 = v.find('\'', q0 + 1);
    h.descr = v.substr(q0 + 1, q1 - q0 - 1);
  }
  h.fortran_order = find_value("fortran_order").find("True") < find_value("fortran_order").find(',');
  {
    std::string v = find_value("shape");
    auto p0 = v.find('(');
    auto p1 = v.find(')');
    std::string tup = v.substr(p0 + 1, p1 - p0 - 1);
    std::istringstream ss(tup);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::string trimmed;
      for (char c : item)
        if (!std::isspace(static_cast<unsigned char>(c))) trimmed += c;
      if (!trimmed.empty()) h.shape.push_back(std::stol(trimmed));
    }
  }
  if (h.fortran_order) throw std::runtime_error("npy: fortran-order arrays not supported: " + path);

  std::size_t esize = 0;
  if (h.descr.size() >= 3)
    esize = static_cast<std::size_t>(h.descr[2] - '0');
  else if (h.descr.size() == 2)
    esize = static_cast<std::size_t>(h.descr[1] - '0');
  if (esize == 0 || esize > 8) throw std::runtime_error("npy: unsupported descr " + h.descr);
  payload.resize(numel(h.shape) * esize);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!in) throw std::runtime_error("npy: truncated payload in " + path);
  return h;
}

void save_f64(const std::string& path, const std::vector<long>& shape, const double* data) {
  save_raw(path, "<f8", shape, data, 8);
}

void save_f32(const std::string& path, const std::vector<long>& shape, const float* data) {
  save_raw(path, "<f4", shape, data, 4);
}

void save_i64(const std::string& path, const std::vector<long>& shape, const std::int64_t* data) {
  save_raw(path, "<i8", shape, data, 8);
}

std::vector<double> load_f64(const std::string& path, std::vector<long>& shape) {
  std::vector<unsigned char> raw;
  Header h = load_raw(path, raw);
  shape = h.shape;
  std::size_t n = numel(h.shape);
  std::vector<double> out(n);
  if (h.descr == "<f8") {
    std::memcpy(out.data(), raw.data(), n * 8);
  } else if (h.descr == "<f4") {
    const float* p = reinterpret_cast<const float*>(raw.data());
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(p[i]);
  } else {
    throw std::runtime_error("npy: expected float array (<f4/<f8), got " + h.descr + " in " + path);
  }
  return out;
}

std::vector<float> load_f32(const std::string& path, std::vector<long>& shape) {
  std::vector<unsigned char> raw;
  Header h = load_raw(path, raw);
  if (h.descr != "<f4")
    throw std::runtime_error("npy: expected <f4 array, got " + h.descr + " in " + path);
  shape = h.shape;
  std::size_t n = numel(h.shape);
  std::vector<float> out(n);
  std::memcpy(out.data(), raw.data(), n * 4);
  return out;
}

std::vector<std::int64_t> load_i64(const std::string& path, std::vector<long>& shape) {
  std::vector<unsigned char> raw;
  Header h = load_raw(path, raw);
  shape = h.shape;
  std::size_t n = numel(h.shape);
  std::vector<std::int64_t> out(n);
  auto widen = [&](auto* p) {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int64_t>(p[i]);
  };
  if (h.descr == "<i8")
    widen(reinterpret_cast<const std::int64_t*>(raw.data()));
  else if (h.descr == "<i4")
    widen(reinterpret_cast<const std::int32_t*>(raw.data()));
  else if (h.descr == "<i2")
    widen(reinterpret_cast<const std::int16_t*>(raw.data()));
  else if (h.descr == "|i1")
    widen(reinterpret_cast<const std::int8_t*>(raw.data()));
  else if (h.descr == "|u1" || h.descr == "|b1")
    widen(reinterpret_cast<const std::uint8_t*>(raw.data()));
  else if (h.descr == "<u2")
    widen(reinterpret_cast<const std::uint16_t*>(raw.data()));
  else if (h.descr == "<u4")
    widen(reinterpret_cast<const std::uint32_t*>(raw.data()));
  else
    throw std::runtime_error("npy: expected integer array, got " + h.descr + " in " + path);
  return out;
}

}  // namespace jbot::npy
