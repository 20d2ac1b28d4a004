#pragma once

// On-disk phantom dataset:
//   <root>/manifest.tsv                       id, role, seed
//   <root>/subjects/<id>/<name>.aslt          clean, gm_mask, wm_mask, series,
//                                             input1, ref1, input2, ref2, pgs

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "asldn/error.hpp"
#include "asldn/phantom.hpp"
#include "asldn/seed.hpp"
#include "asldn/tensor_io.hpp"

namespace asldn {

enum class Role { Train, Val, Test };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Val: return "val";
    case Role::Test: return "test";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  if (s == "train") return Role::Train;
  if (s == "val") return Role::Val;
  if (s == "test") return Role::Test;
  throw Error(ErrorCode::CorruptFile, "unknown role '" + s + "'");
}

struct ManifestEntry {
  std::string id;
  Role role = Role::Train;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::vector<ManifestEntry> subjects;

  std::vector<ManifestEntry> with_role(Role r) const {
    std::vector<ManifestEntry> out;
    for (const auto& s : subjects)
      if (s.role == r) out.push_back(s);
    return out;
  }
};

struct PairFiles {
  std::string id;
  std::string input;      // file stem, e.g. "input1"
  std::string reference;  // e.g. "ref1" or "pgs"
};

enum class ReferenceMode { NoisyPair, PseudoGold };

// Two pairs per training subject: segment 1 -> 2 and segment 3 -> 4 for noisy
// pairs, or both inputs against the pseudo gold standard.
inline std::vector<PairFiles> training_pairs(const Manifest& m, ReferenceMode mode) {
  std::vector<PairFiles> out;
  for (const auto& s : m.with_role(Role::Train)) {
    if (mode == ReferenceMode::NoisyPair) {
      out.push_back({s.id, "input1", "ref1"});
      out.push_back({s.id, "input2", "ref2"});
    } else {
      out.push_back({s.id, "input1", "pgs"});
      out.push_back({s.id, "input2", "pgs"});
    }
  }
  return out;
}

inline constexpr const char* kManifestHeader = "id\trole\tseed";

inline void write_manifest(std::ostream& os, const Manifest& m) {
  os << kManifestHeader << '\n';
  for (const auto& s : m.subjects) os << s.id << '\t' << to_string(s.role) << '\t' << s.seed << '\n';
}

inline Manifest read_manifest(std::istream& is) {
  std::string line;
  require(static_cast<bool>(std::getline(is, line)) && line == kManifestHeader,
          ErrorCode::CorruptFile, "manifest header must be 'id<TAB>role<TAB>seed'");
  Manifest m;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id, role, seed;
    require(static_cast<bool>(std::getline(ss, id, '\t')) &&
                static_cast<bool>(std::getline(ss, role, '\t')) &&
                static_cast<bool>(std::getline(ss, seed)),
            ErrorCode::CorruptFile, "malformed manifest row '" + line + "'");
    require(seen.insert(id).second, ErrorCode::DuplicateName, "duplicate subject id '" + id + "'");
    m.subjects.push_back({id, parse_role(role), std::stoull(seed)});
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& root) {
  std::ifstream is(root / "manifest.tsv");
  require(static_cast<bool>(is), ErrorCode::Io, "no manifest.tsv in " + root.string());
  return read_manifest(is);
}

struct SplitCounts {
  std::size_t train = 20;
  std::size_t val = 5;
  std::size_t test = 10;
  std::size_t total() const { return train + val + test; }
};

struct DatasetOptions {
  SplitCounts split;
  std::size_t height = 64;
  std::size_t width = 64;
  NoiseModel noise;  // noise.seed is ignored; per-subject seeds are derived
  TissueModel tissue;
  double fwhm_px = 1.5;
  std::uint64_t seed = 1;
};

inline std::string subject_id(std::size_t index) {
  std::ostringstream os;
  os << 's';
  os.width(4);
  os.fill('0');
  os << index;
  return os.str();
}

inline std::filesystem::path subject_dir(const std::filesystem::path& root, const std::string& id) {
  return root / "subjects" / id;
}

inline std::filesystem::path subject_file(const std::filesystem::path& root, const std::string& id,
                                          const std::string& name) {
  return subject_dir(root, id) / (name + ".aslt");
}

struct SubjectSeeds {
  std::uint64_t geometry;
  std::uint64_t noise;
};

inline SubjectSeeds subject_seeds(std::uint64_t subject_seed) {
  return {derive_seed(subject_seed, "geometry"), derive_seed(subject_seed, "noise")};
}

inline PhantomSubject generate_subject(std::uint64_t subject_seed, const DatasetOptions& opt) {
  auto seeds = subject_seeds(subject_seed);
  NoiseModel noise = opt.noise;
  noise.seed = seeds.noise;
  return generate_subject(seeds.geometry, noise, opt.height, opt.width, opt.tissue);
}

inline void write_subject(const std::filesystem::path& root, const std::string& id,
                          const PhantomSubject& s, double fwhm_px) {
  std::filesystem::create_directories(subject_dir(root, id));
  auto save = [&](const std::string& name, const Tensor<double>& t) {
    save_tensor(subject_file(root, id, name), tensor_cast<float>(t));
  };
  const auto seg = segment_means(s);
  save("clean", s.clean);
  save("gm_mask", s.gm_mask);
  save("wm_mask", s.wm_mask);
  save("series", s.series);
  save("input1", seg.input1);
  save("ref1", seg.ref1);
  save("input2", seg.input2);
  save("ref2", seg.ref2);
  save("pgs", pseudo_gold_standard(s, fwhm_px).image);
}

// Generates every subject and writes files plus manifest. Subjects are
// assigned train, then val, then test, in index order.
inline Manifest build_dataset(const std::filesystem::path& root, const DatasetOptions& opt) {
  opt.noise.validate();
  require(opt.split.total() > 0, ErrorCode::InvalidArgument, "dataset needs at least one subject");
  require(opt.fwhm_px > 0, ErrorCode::InvalidArgument, "fwhm_px must be > 0");
  Manifest m;
  const auto base = derive_seed(opt.seed, "phantom");
  for (std::size_t i = 0; i < opt.split.total(); ++i) {
    const Role role = i < opt.split.train ? Role::Train
                      : i < opt.split.train + opt.split.val ? Role::Val
                                                            : Role::Test;
    m.subjects.push_back({subject_id(i), role, derive_seed(base, static_cast<std::uint64_t>(i))});
  }
  std::filesystem::create_directories(root / "subjects");
  for (const auto& e : m.subjects) write_subject(root, e.id, generate_subject(e.seed, opt), opt.fwhm_px);
  write_file_atomic(root / "manifest.tsv", [&](std::ostream& os) { write_manifest(os, m); });
  return m;
}

inline Image load_subject_image(const std::filesystem::path& root, const std::string& id,
                                const std::string& name) {
  return load_tensor<double>(subject_file(root, id, name));
}

}  // namespace asldn
