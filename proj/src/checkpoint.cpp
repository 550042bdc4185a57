#include "tscn/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <vector>

#include <json.hpp>

#include "tscn/errors.hpp"

namespace tscn {

namespace {

constexpr const char* kFormat = "tscn-checkpoint";
constexpr int kVersion = 1;
constexpr const char* kLayout = "conv_w[3][E][D],conv_b[E],attn_w[E],attn_b,cls_w[C][E],cls_b[C]";

nlohmann::json stream_header(Stream s, const BaseModelParams& p) {
  return {{"stream", to_string(s)},
          {"D", p.shape().D},
          {"E", p.shape().E},
          {"C", p.shape().C},
          {"activation", to_string(p.shape().activation)},
          {"count", p.data().size()}};
}

void append_blob(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(v(i));
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>(bits >> (8 * b)));
  }
}

BaseModelParams read_stream(const nlohmann::json& h, const std::string& blob, std::size_t& offset) {
  ModelShape shape{h.at("D").get<int>(), h.at("E").get<int>(), h.at("C").get<int>(),
                   activation_from_string(h.at("activation").get<std::string>())};
  BaseModelParams p(shape);
  if (h.at("count").get<Eigen::Index>() != p.data().size()) {
    throw ValidationError("checkpoint coefficient count does not match its dimensions");
  }
  if (blob.size() < offset + 8 * static_cast<std::size_t>(p.data().size())) {
    throw ValidationError("checkpoint blob is truncated");
  }
  for (Eigen::Index i = 0; i < p.data().size(); ++i, offset += 8) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(blob[offset + b])} << (8 * b);
    p.data()(i) = std::bit_cast<double>(bits);
  }
  return p;
}

}  // namespace

std::string checkpoint_filename(const Checkpoint& ckpt) {
  return ckpt.is_ensemble() ? "ckpt_ensemble.bin" : "ckpt_iter" + std::to_string(ckpt.refinement_iteration) + ".bin";
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  nlohmann::json header{{"format", kFormat},
                        {"version", kVersion},
                        {"refinement_iteration", ckpt.refinement_iteration},
                        {"ensemble", ckpt.is_ensemble()},
                        {"layout", kLayout},
                        {"byte_order", "little"},
                        {"streams", {stream_header(Stream::Rgb, ckpt.rgb), stream_header(Stream::Flow, ckpt.flow)}}};
  std::string out = header.dump();
  out.push_back('\n');
  append_blob(out, ckpt.rgb.data());
  append_blob(out, ckpt.flow.data());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw ValidationError("checkpoint " + path.string() + " has no header line");
  try {
    const auto header = nlohmann::json::parse(bytes.substr(0, newline));
    if (header.at("format") != kFormat || header.at("version") != kVersion) {
      throw ValidationError("unsupported checkpoint format in " + path.string());
    }
    const auto& streams = header.at("streams");
    if (!streams.is_array() || streams.size() != 2 || streams[0].at("stream") != "rgb" ||
        streams[1].at("stream") != "flow") {
      throw ValidationError("checkpoint must hold rgb then flow streams");
    }
    std::size_t offset = newline + 1;
    Checkpoint ckpt;
    ckpt.rgb = read_stream(streams[0], bytes, offset);
    ckpt.flow = read_stream(streams[1], bytes, offset);
    if (offset != bytes.size()) throw ValidationError("checkpoint has trailing bytes");
    ckpt.refinement_iteration = header.at("refinement_iteration").get<int>();
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
}

}  // namespace tscn
