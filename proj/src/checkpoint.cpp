#include "pfedpt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pfedpt {

namespace {

constexpr char kModelMagic[8] = {'P', 'F', 'P', 'T', 'M', 'D', 'L', '1'};
constexpr char kPromptMagic[8] = {'P', 'F', 'P', 'T', 'P', 'R', 'M', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path, const char (&magic)[8], const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char got[8];
  in.read(got, 8);
  if (!in || std::memcmp(got, magic, 8) != 0)
    throw std::runtime_error(std::string("checkpoint: ") + path + " is not a " + what +
                             " checkpoint");
  return in;
}

}  // namespace

void save_model_checkpoint(const std::string& path, const ParameterVector<float>& pv,
                           const std::string& spec_tag) {
  auto out = open_out(path);
  out.write(kModelMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(spec_tag.size()));
  out.write(spec_tag.data(), static_cast<std::streamsize>(spec_tag.size()));
  put_u64(out, static_cast<std::uint64_t>(pv.size()));
  for (Index i = 0; i < pv.size(); ++i) put_f32(out, pv.values[i]);
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

ModelCheckpoint load_model_checkpoint(const std::string& path) {
  auto in = open_in(path, kModelMagic, "model");
  ModelCheckpoint ck;
  const std::uint32_t tag_len = get_u32(in);
  ck.spec_tag.resize(tag_len);
  in.read(ck.spec_tag.data(), tag_len);
  const std::uint64_t count = get_u64(in);
  ck.values.resize(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) ck.values[static_cast<Index>(i)] = get_f32(in);
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  return ck;
}

void save_prompt_checkpoint(const std::string& path, const PromptState<float>& state) {
  auto out = open_out(path);
  out.write(kPromptMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(state.spec.kind));
  put_u32(out, static_cast<std::uint32_t>(state.spec.mode));
  put_u32(out, static_cast<std::uint32_t>(state.spec.size));
  for (Index e : state.spec.image) put_u32(out, static_cast<std::uint32_t>(e));
  const VectorX<float> packed = state.packed();
  put_u64(out, static_cast<std::uint64_t>(packed.size()));
  for (Index i = 0; i < packed.size(); ++i) put_f32(out, packed[i]);
  if (!out) throw std::runtime_error("checkpoint: short write to " + path);
}

PromptState<float> load_prompt_checkpoint(const std::string& path) {
  auto in = open_in(path, kPromptMagic, "prompt");
  PromptSpec spec;
  spec.kind = static_cast<PromptTemplate>(get_u32(in));
  spec.mode = static_cast<PromptMode>(get_u32(in));
  spec.size = static_cast<Index>(get_u32(in));
  spec.image.resize(3);
  for (auto& e : spec.image) e = static_cast<Index>(get_u32(in));
  PromptState<float> state = init_prompt<float>(spec, 0);
  const std::uint64_t count = get_u64(in);
  if (static_cast<Index>(count) != state.param_count())
    throw std::runtime_error("checkpoint: prompt value count mismatch in " + path);
  VectorX<float> packed(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) packed[static_cast<Index>(i)] = get_f32(in);
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  state.unpack(packed);
  return state;
}

}  // namespace pfedpt
