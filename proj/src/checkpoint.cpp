/* Copyright 2026 The MLD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "mld/checkpoint.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mld/io_error.hpp"

namespace mld {

namespace {

constexpr char kMagic[8] = {'M', 'L', 'D', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes, std::size_t pos, std::size_t end)
      : bytes_(bytes), pos_(pos), end_(end) {}

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::string str(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    if (n > end_ - pos_) throw ValidationError("checkpoint is truncated");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::string& bytes_;
  std::size_t pos_, end_;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t begin, std::size_t end) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + begin),
              static_cast<uInt>(end - begin));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_checkpoint(const Detector& model, const nlohmann::json& manifest) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string m = manifest.dump();
  put_u32(out, static_cast<std::uint32_t>(m.size()));
  out += m;
  const ParamList params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = p->value;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  put_u32(out, crc_of(out, sizeof(kMagic), out.size()));
  return out;
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 12 ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("not a checkpoint file (bad magic)");
  }
  const std::size_t body_end = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body_end, 4);
  if (stored != crc_of(bytes, sizeof(kMagic), body_end)) {
    throw ValidationError("checkpoint checksum mismatch (file is corrupt)");
  }
  Reader r(bytes, sizeof(kMagic), body_end);
  CheckpointData data;
  try {
    data.manifest = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint manifest: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    nt.tensor = Tensor(shape);
    for (double& v : nt.tensor.values()) {
      float f;
      std::memcpy(&f, r.take(4), 4);
      v = f;
    }
    data.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw ValidationError("checkpoint has trailing bytes");
  return data;
}

void save_checkpoint(const std::filesystem::path& path, const Detector& model,
                     const nlohmann::json& manifest) {
  write_file(path, encode_checkpoint(model, manifest));
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void restore_parameters(Detector& model, const std::vector<NamedTensor>& tensors) {
  const ParamList params = model.parameters();
  if (params.size() != tensors.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    if (tensors[i].name != name || tensors[i].tensor.shape() != p->value.shape()) {
      throw ValidationError("checkpoint/config mismatch at '" + name + "' " +
                            p->value.shape_str() + ": checkpoint has '" + tensors[i].name +
                            "' " + tensors[i].tensor.shape_str());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i].second->value = tensors[i].tensor;
  }
}

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string file_blob_hash(const std::filesystem::path& path) {
  return git_blob_hash(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("error writing " + path.string());
}

}  // namespace mld
