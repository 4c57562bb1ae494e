#include "disncl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "disncl/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "container writer assumes a little-endian host");

namespace disncl {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'C', 'L', 'A', 'R', 'R', '1'};
constexpr std::uint32_t kVersion = 1;

void write_raw(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw IoError("container: write failed");
}

void read_raw(std::ifstream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n)) throw IoError("container: truncated file");
}

}  // namespace

const NamedArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_container(const std::string& path, const Container& c) {
  nlohmann::json header;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    const std::uint64_t nbytes = static_cast<std::uint64_t>(a.data.size()) * sizeof(float);
    header["arrays"].push_back({{"name", a.name},
                                {"rows", a.data.rows()},
                                {"cols", a.data.cols()},
                                {"dtype", "f32"},
                                {"offset", offset},
                                {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("container: cannot open for writing: " + path);
  write_raw(out, kMagic, sizeof(kMagic));
  write_raw(out, &kVersion, sizeof(kVersion));
  const std::uint64_t hlen = hs.size();
  write_raw(out, &hlen, sizeof(hlen));
  write_raw(out, hs.data(), hs.size());
  std::vector<float> rowbuf;
  for (const auto& a : c.arrays) {
    // Row-major on disk regardless of Eigen's storage order.
    rowbuf.resize(static_cast<std::size_t>(a.data.cols()));
    for (long r = 0; r < a.data.rows(); ++r) {
      for (long col = 0; col < a.data.cols(); ++col) {
        rowbuf[static_cast<std::size_t>(col)] = a.data(r, col);
      }
      write_raw(out, rowbuf.data(), rowbuf.size() * sizeof(float));
    }
  }
  out.flush();
  if (!out) throw IoError("container: flush failed for " + path);
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("container: cannot open: " + path);
  char magic[8];
  read_raw(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("container: bad magic in " + path);
  }
  std::uint32_t version = 0;
  read_raw(in, &version, sizeof(version));
  if (version != kVersion) throw IoError("container: unsupported version");
  std::uint64_t hlen = 0;
  read_raw(in, &hlen, sizeof(hlen));
  std::string hs(hlen, '\0');
  read_raw(in, hs.data(), hlen);
  nlohmann::json header = nlohmann::json::parse(hs);

  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  for (const auto& e : header.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    const long rows = e.at("rows").get<long>();
    const long cols = e.at("cols").get<long>();
    if (e.at("dtype").get<std::string>() != "f32") {
      throw IoError("container: unsupported dtype for array " + a.name);
    }
    a.data.resize(rows, cols);
    std::vector<float> rowbuf(static_cast<std::size_t>(cols));
    for (long r = 0; r < rows; ++r) {
      read_raw(in, rowbuf.data(), rowbuf.size() * sizeof(float));
      for (long col = 0; col < cols; ++col) a.data(r, col) = rowbuf[static_cast<std::size_t>(col)];
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

namespace {

Eigen::MatrixXf to_f32(const Eigen::MatrixXd& m) { return m.cast<float>(); }

Eigen::MatrixXf flags_to_f32(const std::vector<std::uint8_t>& f) {
  Eigen::MatrixXf m(static_cast<long>(f.size()), 1);
  for (std::size_t i = 0; i < f.size(); ++i) m(static_cast<long>(i), 0) = f[i] ? 1.0f : 0.0f;
  return m;
}

std::vector<std::uint8_t> f32_to_flags(const Eigen::MatrixXf& m) {
  std::vector<std::uint8_t> f(static_cast<std::size_t>(m.rows()));
  for (long i = 0; i < m.rows(); ++i) f[static_cast<std::size_t>(i)] = m(i, 0) != 0.0f ? 1 : 0;
  return f;
}

}  // namespace

void save_dataset(const std::string& path, const PairDataset& d) {
  Container c;
  c.meta["kind"] = "pair_dataset";
  c.meta["n"] = d.size();
  c.meta["noise_fraction"] = d.noise_fraction();
  if (d.spec) {
    c.meta["latent_spec"] = {{"dim_shared", d.spec->dim_shared},
                             {"dim_excl_v", d.spec->dim_excl_v},
                             {"dim_excl_t", d.spec->dim_excl_t},
                             {"obs_dim_v", d.spec->obs_dim_v},
                             {"obs_dim_t", d.spec->obs_dim_t},
                             {"noise_std", d.spec->noise_std},
                             {"seed", d.spec->seed}};
  }
  c.arrays.push_back({"V", to_f32(d.V)});
  c.arrays.push_back({"T", to_f32(d.T)});
  c.arrays.push_back({"match", flags_to_f32(d.match)});
  c.arrays.push_back({"noise_mask", flags_to_f32(d.noise_mask)});
  if (d.has_latents) {
    c.arrays.push_back({"z_shared_v", to_f32(d.z_shared_v)});
    c.arrays.push_back({"z_shared_t", to_f32(d.z_shared_t)});
    c.arrays.push_back({"z_excl_v", to_f32(d.z_excl_v)});
    c.arrays.push_back({"z_excl_t", to_f32(d.z_excl_t)});
  }
  write_container(path, c);
}

PairDataset load_dataset(const std::string& path) {
  Container c = read_container(path);
  if (c.meta.value("kind", "") != "pair_dataset") {
    throw IoError("load_dataset: " + path + " is not a pair_dataset container");
  }
  PairDataset d;
  const NamedArray* v = c.find("V");
  const NamedArray* t = c.find("T");
  const NamedArray* match = c.find("match");
  const NamedArray* mask = c.find("noise_mask");
  if (!v || !t || !match || !mask) throw IoError("load_dataset: missing required arrays");
  d.V = v->data.cast<double>();
  d.T = t->data.cast<double>();
  d.match = f32_to_flags(match->data);
  d.noise_mask = f32_to_flags(mask->data);
  const NamedArray* zsv = c.find("z_shared_v");
  if (zsv) {
    d.has_latents = true;
    d.z_shared_v = zsv->data.cast<double>();
    d.z_shared_t = c.find("z_shared_t")->data.cast<double>();
    d.z_excl_v = c.find("z_excl_v")->data.cast<double>();
    d.z_excl_t = c.find("z_excl_t")->data.cast<double>();
  }
  if (c.meta.contains("latent_spec")) {
    const auto& s = c.meta["latent_spec"];
    LatentSpec spec;
    spec.dim_shared = s.at("dim_shared").get<int>();
    spec.dim_excl_v = s.at("dim_excl_v").get<int>();
    spec.dim_excl_t = s.at("dim_excl_t").get<int>();
    spec.obs_dim_v = s.at("obs_dim_v").get<int>();
    spec.obs_dim_t = s.at("obs_dim_t").get<int>();
    spec.noise_std = s.at("noise_std").get<double>();
    spec.seed = s.at("seed").get<std::uint64_t>();
    d.spec = spec;
  }
  return d;
}

PairDataset ingest_pair(const std::string& path_a, const std::string& path_b) {
  Container ca = read_container(path_a);
  Container cb = read_container(path_b);
  if (ca.arrays.empty() || cb.arrays.empty()) {
    throw IngestError("ingest: containers must hold at least one array");
  }
  const NamedArray& a = ca.arrays.front();
  const NamedArray& b = cb.arrays.front();
  if (a.data.rows() != b.data.rows()) {
    throw IngestError("ingest: modality lengths differ (" + std::to_string(a.data.rows()) +
                      " vs " + std::to_string(b.data.rows()) + ")");
  }
  if (a.data.rows() < 1) throw IngestError("ingest: empty feature arrays");
  PairDataset d;
  d.V = a.data.cast<double>();
  d.T = b.data.cast<double>();
  d.match.assign(static_cast<std::size_t>(a.data.rows()), 1);
  d.noise_mask.assign(static_cast<std::size_t>(a.data.rows()), 0);
  d.has_latents = false;
  return d;
}

}  // namespace disncl
