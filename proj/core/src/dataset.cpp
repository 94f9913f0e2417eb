#include "mmca/dataset.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace mmca {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'D', 'S'};

void write_u64(std::ostream& os, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void save_dataset(const std::string& path, const FrameGrid& grid,
                  const std::optional<NormStats>& stats) {
  nlohmann::json header;
  header["format"] = "mmca-dataset-v1";
  header["segment_ids"] = grid.segment_ids;
  header["day_dates"] = grid.day_dates;
  header["steps_per_day"] = grid.config.steps_per_day;
  header["day_start_sec"] = grid.config.day_start_sec;
  header["interval_sec"] = grid.config.interval_sec;
  header["free_flow_default_mph"] = grid.config.free_flow_default_mph;
  header["features"] = kFeatureNames;
  if (stats) {
    header["norm_stats"]["min"] = stats->min;
    header["norm_stats"]["max"] = stats->max;
  }
  std::string hs = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
  os.write(kMagic, 4);
  write_u64(os, hs.size());
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  os.write(reinterpret_cast<const char*>(grid.values.data()),
           static_cast<std::streamsize>(grid.values.size() * sizeof(double)));
  os.write(reinterpret_cast<const char*>(grid.imputed.data()),
           static_cast<std::streamsize>(grid.imputed.size()));
  if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

LoadedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_dataset: bad magic in " + path);
  uint64_t hlen = read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(hlen));
  auto header = nlohmann::json::parse(hs);

  LoadedDataset out;
  FrameGrid& grid = out.grid;
  grid.segment_ids = header["segment_ids"].get<std::vector<std::string>>();
  grid.day_dates = header["day_dates"].get<std::vector<int>>();
  grid.config.steps_per_day = header["steps_per_day"];
  grid.config.day_start_sec = header["day_start_sec"];
  grid.config.interval_sec = header["interval_sec"];
  grid.config.free_flow_default_mph = header["free_flow_default_mph"];
  size_t n = static_cast<size_t>(grid.n_days()) * grid.config.steps_per_day *
             grid.n_segments();
  grid.values.resize(n * kNumFeatures);
  grid.imputed.resize(n);
  is.read(reinterpret_cast<char*>(grid.values.data()),
          static_cast<std::streamsize>(grid.values.size() * sizeof(double)));
  is.read(reinterpret_cast<char*>(grid.imputed.data()),
          static_cast<std::streamsize>(grid.imputed.size()));
  if (!is) throw std::runtime_error("load_dataset: truncated payload in " + path);
  if (header.contains("norm_stats")) {
    NormStats st;
    auto mn = header["norm_stats"]["min"].get<std::vector<double>>();
    auto mx = header["norm_stats"]["max"].get<std::vector<double>>();
    std::copy(mn.begin(), mn.end(), st.min.begin());
    std::copy(mx.begin(), mx.end(), st.max.begin());
    out.stats = st;
  }
  return out;
}

}  // namespace mmca
