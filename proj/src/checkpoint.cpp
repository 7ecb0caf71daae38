#include "deca/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "deca/error.hpp"

namespace deca {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian float32");

using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.f32";

void write_file(const std::filesystem::path& path, const char* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(bytes));
  require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace

void save_checkpoint(const Trainer<float>& trainer, const std::filesystem::path& dir, const json& metadata) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorKind::Io, "cannot create directory " + dir.string());

  const auto params = trainer.parameters();
  const auto& adam = trainer.adam();
  std::vector<float> blob;
  json table = json::array();
  for (const auto& p : params) {
    table.push_back({{"name", p.name},
                     {"shape", p.tensor.shape()},
                     {"offset", blob.size() * sizeof(float)},
                     {"count", p.tensor.numel()}});
    blob.insert(blob.end(), p.tensor.data().begin(), p.tensor.data().end());
  }
  json moments = json::array();
  if (!adam.m.empty()) {
    require(adam.m.size() == params.size(), ErrorKind::Contract, "optimizer state does not match the parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t m_offset = blob.size() * sizeof(float);
      blob.insert(blob.end(), adam.m[i].begin(), adam.m[i].end());
      const std::size_t v_offset = blob.size() * sizeof(float);
      blob.insert(blob.end(), adam.v[i].begin(), adam.v[i].end());
      moments.push_back(
          {{"name", params[i].name}, {"m_offset", m_offset}, {"v_offset", v_offset}, {"count", adam.m[i].size()}});
    }
  }
  json s = json::object();
  for (std::size_t i = 0; i < trainer.loss_weights().tasks.size(); ++i)
    s[to_string(trainer.loss_weights().tasks[i])] = trainer.loss_weights().s[i].tensor.item();

  const json manifest = {{"format_version", kCheckpointFormatVersion},
                         {"config", to_json(RunConfig{trainer.model_config(), trainer.config()})},
                         {"parameters", table},
                         {"loss_weights", s},
                         {"adam", {{"step", adam.step}, {"moments", moments}}},
                         {"step", trainer.step()},
                         {"seed", trainer.config().seed},
                         {"blob", kBlob},
                         {"blob_bytes", blob.size() * sizeof(float)},
                         {"metadata", metadata}};
  write_file(dir / kBlob, reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(float));
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / kManifest, text.data(), text.size());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifest);
  require(in.good(), ErrorKind::Io, "cannot read " + (dir / kManifest).string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, (dir / kManifest).string() + ": " + e.what());
  }

  LoadedCheckpoint out;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> table;
  struct Moment {
    std::size_t m_offset, v_offset, count;
  };
  std::vector<Moment> moments;
  std::size_t blob_bytes = 0, step = 0;
  try {
    const int version = manifest.at("format_version").get<int>();
    require(version == kCheckpointFormatVersion, ErrorKind::VersionMismatch,
            "checkpoint format " + std::to_string(version) + ", this build reads " +
                std::to_string(kCheckpointFormatVersion));
    out.config = run_config_from_json(manifest.at("config"));
    for (const auto& e : manifest.at("parameters"))
      table.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                       e.at("count").get<std::size_t>()});
    for (const auto& e : manifest.at("adam").at("moments"))
      moments.push_back(
          {e.at("m_offset").get<std::size_t>(), e.at("v_offset").get<std::size_t>(), e.at("count").get<std::size_t>()});
    step = manifest.at("adam").at("step").get<std::size_t>();
    blob_bytes = manifest.at("blob_bytes").get<std::size_t>();
    if (manifest.contains("metadata")) out.metadata = manifest.at("metadata");
  } catch (const json::exception& e) {
    fail(ErrorKind::Data, (dir / kManifest).string() + ": " + e.what());
  }

  // Offsets must tile the blob exactly, in order.
  std::size_t cursor = 0;
  for (const auto& e : table) {
    require(e.offset == cursor && numel(e.shape) == e.count, ErrorKind::ShapeMismatch,
            "parameter table entry " + e.name + " is inconsistent");
    cursor += e.count * sizeof(float);
  }
  require(moments.empty() || moments.size() == table.size(), ErrorKind::ShapeMismatch,
          "optimizer moments do not match the parameter table");
  for (std::size_t i = 0; i < moments.size(); ++i) {
    require(moments[i].m_offset == cursor && moments[i].count == table[i].count &&
                moments[i].v_offset == cursor + table[i].count * sizeof(float),
            ErrorKind::ShapeMismatch, "optimizer moment table is inconsistent");
    cursor += 2 * table[i].count * sizeof(float);
  }
  require(cursor == blob_bytes, ErrorKind::ShapeMismatch, "blob_bytes disagrees with the parameter table");
  std::error_code ec;
  const auto actual = std::filesystem::file_size(dir / kBlob, ec);
  require(!ec, ErrorKind::Io, "cannot read " + (dir / kBlob).string());
  require(actual >= blob_bytes, ErrorKind::TruncatedBlob,
          "truncated blob: " + std::to_string(actual) + " of " + std::to_string(blob_bytes) + " bytes");
  require(actual == blob_bytes, ErrorKind::Data,
          "blob has " + std::to_string(actual - blob_bytes) + " unexpected trailing bytes");

  auto trainer = std::make_unique<Trainer<float>>(out.config.model, out.config.train);
  const auto params = trainer->parameters();
  require(params.size() == table.size(), ErrorKind::ShapeMismatch,
          "checkpoint has " + std::to_string(table.size()) + " parameters, the config builds " +
              std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    require(params[i].name == table[i].name && params[i].tensor.shape() == table[i].shape, ErrorKind::ShapeMismatch,
            "parameter " + table[i].name + " " + to_string(table[i].shape) + " does not match " + params[i].name +
                " " + to_string(params[i].tensor.shape()));

  std::vector<float> blob(blob_bytes / sizeof(float));
  std::ifstream bin(dir / kBlob, std::ios::binary);
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_bytes));
  require(bin.good(), ErrorKind::TruncatedBlob, "truncated blob while reading " + (dir / kBlob).string());

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto t = params[i].tensor;
    const auto src = blob.begin() + static_cast<std::ptrdiff_t>(table[i].offset / sizeof(float));
    std::copy(src, src + static_cast<std::ptrdiff_t>(table[i].count), t.mutable_data().begin());
  }
  auto& adam = trainer->adam();
  adam.step = step;
  for (const auto& m : moments) {
    const auto ms = blob.begin() + static_cast<std::ptrdiff_t>(m.m_offset / sizeof(float));
    const auto vs = blob.begin() + static_cast<std::ptrdiff_t>(m.v_offset / sizeof(float));
    adam.m.emplace_back(ms, ms + static_cast<std::ptrdiff_t>(m.count));
    adam.v.emplace_back(vs, vs + static_cast<std::ptrdiff_t>(m.count));
  }
  out.trainer = std::move(trainer);
  return out;
}

}  // namespace deca
