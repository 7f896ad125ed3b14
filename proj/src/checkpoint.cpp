#include "fhnet/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>

#include "fhnet/record.hpp"

namespace fhnet::model {

namespace {

constexpr std::string_view kMagic = "FHNETCK1";
constexpr int kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const Tensor& t) {
  put_u64(out, t.size());
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  std::uint64_t u64() {
    need(8, "integer");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  Tensor tensor(const Shape& shape, const std::string& name) {
    const std::uint64_t n = u64();
    if (n != shape_size(shape))
      throw ParseError(origin_, 0, "tensor " + name + " holds " + std::to_string(n) + " values, header says " +
                                       shape_str(shape));
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(u64());
    return Tensor(shape, std::move(data));
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(origin_, 0, std::string("truncated checkpoint while reading ") + what);
  }

  std::string_view bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  check_params(ck.config, ck.params);
  nlohmann::ordered_json header;
  header["format_version"] = kFormatVersion;
  header["config"] = ck.config.to_json();
  auto params = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < ck.params.size(); ++i)
    params.push_back({{"name", ck.params.names()[i]}, {"shape", ck.params.tensors()[i].shape()}});
  header["params"] = params;
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    if (o.step > 0 && (o.first_moment.size() != ck.params.size() || o.second_moment.size() != ck.params.size()))
      throw std::invalid_argument("optimizer moments do not match the parameter list");
    header["optimizer"] = {{"lr", o.hyper.lr}, {"beta1", o.hyper.beta1}, {"beta2", o.hyper.beta2},
                           {"epsilon", o.hyper.epsilon}, {"step", o.step}};
  } else {
    header["optimizer"] = nullptr;
  }
  header["meta"] = ck.meta;

  const std::string text = header.dump();
  std::string out(kMagic);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : ck.params.tensors()) put_tensor(out, t);
  if (ck.optimizer && ck.optimizer->step > 0) {
    for (const auto& t : ck.optimizer->first_moment) put_tensor(out, t);
    for (const auto& t : ck.optimizer->second_moment) put_tensor(out, t);
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.take(kMagic.size(), "magic") != kMagic) throw ParseError(origin, 0, "not a checkpoint file (bad magic)");
  const std::uint64_t len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.take(len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin, 0, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion)
    throw ParseError(origin, 0, "unsupported checkpoint version " + header.value("format_version", nlohmann::json()).dump());

  Checkpoint ck;
  ck.config = ModelConfig::from_json(header.at("config"));
  for (const auto& p : header.at("params")) {
    const auto name = p.at("name").get<std::string>();
    ck.params.add(name, r.tensor(p.at("shape").get<Shape>(), name));
  }
  check_params(ck.config, ck.params);
  const auto& opt = header.at("optimizer");
  if (!opt.is_null()) {
    AdamState s;
    s.hyper = {opt.at("lr").get<double>(), opt.at("beta1").get<double>(), opt.at("beta2").get<double>(),
               opt.at("epsilon").get<double>()};
    s.step = opt.at("step").get<std::int64_t>();
    if (s.step > 0) {
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t i = 0; i < ck.params.size(); ++i) {
          auto t = r.tensor(ck.params.tensors()[i].shape(), ck.params.names()[i]);
          (pass == 0 ? s.first_moment : s.second_moment).push_back(std::move(t));
        }
    }
    ck.optimizer = std::move(s);
  }
  if (!r.done()) throw ParseError(origin, 0, "trailing bytes after checkpoint payload");
  ck.meta = header.at("meta");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_text_file(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_text_file(path), path.string());
}

std::string content_id(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fhnet::model
