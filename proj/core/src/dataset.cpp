#include "dip/dataset.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dip/checkpoint.hpp"
#include "dip/parallel.hpp"

namespace dip::dataset {

namespace {

using json = nlohmann::ordered_json;

std::string video_id(const synth::Video& v) {
  std::ostringstream os;
  os << (v.label == synth::Label::kFake ? "fake_" : "real_");
  os.width(4);
  os.fill('0');
  os << v.source_id;
  return os.str();
}

json write_split(const std::filesystem::path& dir, const std::string& split,
                 const std::vector<synth::VideoPair>& pairs) {
  std::filesystem::create_directories(dir / split);
  json entries = json::array();
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    for (const synth::Video* v : {&pairs[p].real, &pairs[p].fake}) {
      const std::string id = video_id(*v);
      const std::string file = split + "/" + id + ".dipckpt";
      write_records(dir / file, {{"frames", v->frames}});
      entries.push_back({{"id", id},
                         {"file", file},
                         {"label", synth::to_string(v->label)},
                         {"source_id", v->source_id},
                         {"pair", p}});
    }
  }
  return entries;
}

std::vector<synth::VideoPair> read_split(const std::filesystem::path& dir, const json& entries) {
  if (!entries.is_array()) throw std::runtime_error("manifest: split is not an array");
  std::map<std::size_t, synth::VideoPair> pairs;
  std::map<std::size_t, int> seen;
  for (const auto& e : entries) {
    const auto records = read_records(dir / e.at("file").get<std::string>());
    if (records.size() != 1 || records[0].first != "frames") {
      throw std::runtime_error("video file must hold a single frames record");
    }
    synth::Video v;
    v.frames = records[0].second;
    v.source_id = e.at("source_id").get<int>();
    const std::string label = e.at("label").get<std::string>();
    if (label != "real" && label != "fake") throw std::runtime_error("manifest: bad label " + label);
    v.label = label == "fake" ? synth::Label::kFake : synth::Label::kReal;
    const auto p = e.at("pair").get<std::size_t>();
    (v.label == synth::Label::kFake ? pairs[p].fake : pairs[p].real) = std::move(v);
    seen[p] |= label == "fake" ? 2 : 1;
  }
  std::vector<synth::VideoPair> out;
  for (auto& [p, pair] : pairs) {
    if (seen[p] != 3) throw std::runtime_error("manifest: pair " + std::to_string(p) + " is incomplete");
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace

std::vector<synth::Video> Dataset::heldout_videos() const {
  std::vector<synth::Video> out;
  for (const auto& p : heldout) {
    out.push_back(p.real);
    out.push_back(p.fake);
  }
  return out;
}

Dataset generate(const RunConfig& cfg) {
  const synth::SynthConfig scfg = cfg.synth_config();
  Dataset d;
  d.train.resize(cfg.n_train_pairs);
  d.heldout.resize(cfg.n_heldout_pairs);
  const std::size_t total = cfg.n_train_pairs + cfg.n_heldout_pairs;
  parallel_for(total, [&](std::size_t i) {
    auto& slot = i < cfg.n_train_pairs ? d.train[i] : d.heldout[i - cfg.n_train_pairs];
    slot = synth::synth_video_pair(scfg, static_cast<int>(i), scfg.seed);
  });
  return d;
}

void write(const std::filesystem::path& dir, const Dataset& data, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["config"] = json::parse(to_json(cfg));
  manifest["entries"] = write_split(dir, "train", data.train);
  manifest["heldout"] = write_split(dir, "heldout", data.heldout);
  std::ofstream os(dir / "manifest.json");
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << manifest.dump(2) << '\n';
}

Dataset read(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("data directory not found: " + dir.string());
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("manifest.json not found in " + dir.string());
  json manifest;
  try {
    manifest = json::parse(is);
    Dataset d;
    d.train = read_split(dir, manifest.at("entries"));
    d.heldout = read_split(dir, manifest.at("heldout"));
    return d;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace dip::dataset
