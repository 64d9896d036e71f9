#include "actrev/capture.hpp"

#include <cstring>
#include <fstream>

#include "actrev/error.hpp"
#include "actrev/util.hpp"

namespace actrev {

void LabeledActivationSet::add(std::vector<float> v, std::uint8_t label) {
  if (width == 0 && entries.empty()) width = v.size();
  if (v.size() != width)
    throw Error(ErrorKind::ShapeMismatch, "activation width " + std::to_string(v.size()) + " != set width " +
                                              std::to_string(width));
  if (label > 1) throw Error(ErrorKind::InvalidArgument, "activation label must be 0 or 1");
  (label ? n_pos : n_neg) += 1;
  entries.push_back({std::move(v), label});
}

void LabeledActivationSet::validate() const {
  std::size_t pos = 0;
  for (const auto& e : entries) {
    if (e.vector.size() != width) throw Error(ErrorKind::ShapeMismatch, "activation set has ragged rows");
    if (e.label > 1) throw Error(ErrorKind::InvalidArgument, "activation label must be 0 or 1");
    pos += e.label;
  }
  if (pos != n_pos || entries.size() != n_pos + n_neg)
    throw Error(ErrorKind::InvalidArgument, "activation set counts inconsistent with entries");
}

std::string LabeledActivationSet::fingerprint() const {
  Fingerprint fp;
  fp.text(site.to_string()).u64(width).u64(entries.size());
  for (const auto& e : entries) fp.floats(e.vector).u64(e.label);
  fp.text(corpus_fingerprint).text(model_fingerprint);
  return fp.hex();
}

namespace {

std::string inputs_fingerprint(const std::vector<Sample>& samples) {
  Fingerprint fp;
  for (const auto& s : samples) fp.ints(s.prompt).i64(s.label);
  return fp.hex();
}

std::string inputs_fingerprint(const std::vector<ContrastivePair>& pairs) {
  Fingerprint fp;
  for (const auto& p : pairs) fp.ints(p.positive_sequence()).ints(p.negative_sequence());
  return fp.hex();
}

struct Job {
  std::vector<int> tokens;
  std::uint8_t label;
};

std::vector<Job> jobs_for(const std::vector<Sample>& samples) {
  std::vector<Job> out;
  for (const auto& s : samples) out.push_back({s.prompt, static_cast<std::uint8_t>(s.label)});
  return out;
}

std::vector<Job> jobs_for(const std::vector<ContrastivePair>& pairs) {
  std::vector<Job> out;
  for (const auto& p : pairs) {
    out.push_back({p.positive_sequence(), 1});
    out.push_back({p.negative_sequence(), 0});
  }
  return out;
}

std::vector<LabeledActivationSet> run_capture(const TransformerWeights& model, const std::vector<Job>& jobs,
                                              const std::vector<HookSite>& sites, const std::string& corpus_fp,
                                              std::size_t n_jobs) {
  if (jobs.empty()) throw Error(ErrorKind::InvalidArgument, "capture: empty input");
  for (const auto& s : sites) model.config.validate_site(s);
  std::vector<std::vector<std::vector<float>>> rows(jobs.size());
  ForwardOptions fo;
  fo.capture = sites;
  parallel_for(jobs.size(), n_jobs, [&](std::size_t i) {
    const ForwardTrace tr = forward(model, jobs[i].tokens, fo);
    rows[i].reserve(sites.size());
    for (const auto& s : sites) rows[i].push_back(last_token_activation(tr, s));
  });
  const std::string model_fp = model.fingerprint();
  std::vector<LabeledActivationSet> sets(sites.size());
  for (std::size_t k = 0; k < sites.size(); ++k) {
    sets[k].site = sites[k];
    sets[k].width = static_cast<std::size_t>(model.config.site_width(sites[k]));
    sets[k].corpus_fingerprint = corpus_fp;
    sets[k].model_fingerprint = model_fp;
    sets[k].entries.reserve(jobs.size());
  }
  for (std::size_t i = 0; i < jobs.size(); ++i)
    for (std::size_t k = 0; k < sites.size(); ++k) sets[k].add(std::move(rows[i][k]), jobs[i].label);
  return sets;
}

ActivationGrid to_grid(const ModelConfig& c, std::vector<LabeledActivationSet> sets) {
  ActivationGrid g;
  const std::size_t nh = static_cast<std::size_t>(c.n_layers) * c.n_heads;
  g.head_sets.assign(std::make_move_iterator(sets.begin()), std::make_move_iterator(sets.begin() + nh));
  g.layer_sets.assign(std::make_move_iterator(sets.begin() + nh), std::make_move_iterator(sets.end()));
  return g;
}

}  // namespace

LabeledActivationSet capture_set(const TransformerWeights& model, const std::vector<Sample>& samples,
                                 const HookSite& site, std::size_t jobs) {
  return std::move(run_capture(model, jobs_for(samples), {site}, inputs_fingerprint(samples), jobs)[0]);
}

LabeledActivationSet capture_set(const TransformerWeights& model, const std::vector<ContrastivePair>& pairs,
                                 const HookSite& site, std::size_t jobs) {
  return std::move(run_capture(model, jobs_for(pairs), {site}, inputs_fingerprint(pairs), jobs)[0]);
}

std::vector<HookSite> grid_sites(const ModelConfig& c) {
  std::vector<HookSite> sites;
  for (int l = 0; l < c.n_layers; ++l)
    for (int h = 0; h < c.n_heads; ++h) sites.push_back(HookSite::head_output(l, h));
  for (int l = 0; l < c.n_layers; ++l) sites.push_back(HookSite::layer_residual(l));
  return sites;
}

const LabeledActivationSet& ActivationGrid::at(const HookSite& site, int n_heads) const {
  if (site.kind == SiteKind::HeadOutput) return head(site.layer, *site.head, n_heads);
  if (site.kind == SiteKind::LayerResidual) return layer(site.layer);
  throw Error(ErrorKind::InvalidArgument, "activation grid holds no " + site.to_string() + " set");
}

ActivationGrid capture_grid(const TransformerWeights& model, const std::vector<Sample>& samples, std::size_t jobs) {
  return to_grid(model.config, run_capture(model, jobs_for(samples), grid_sites(model.config),
                                           inputs_fingerprint(samples), jobs));
}

ActivationGrid capture_grid(const TransformerWeights& model, const std::vector<ContrastivePair>& pairs,
                            std::size_t jobs) {
  return to_grid(model.config, run_capture(model, jobs_for(pairs), grid_sites(model.config),
                                           inputs_fingerprint(pairs), jobs));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'A', 'C', 'T', 'R', 'E', 'V', 'A', 'S'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw Error(ErrorKind::Format, path + ": truncated activation set");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is, const std::string& path) {
  const std::uint32_t n = get_u32(is, path);
  if (n > 4096) throw Error(ErrorKind::Format, path + ": implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (static_cast<std::uint32_t>(is.gcount()) != n) throw Error(ErrorKind::Format, path + ": truncated string");
  return s;
}

}  // namespace

void save_activation_set(const LabeledActivationSet& set, const std::string& path) {
  set.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path);
  os.write(kMagic, 8);
  put_u32(os, kActivationFormatVersion);
  const char kind = static_cast<char>(set.site.kind);
  os.write(&kind, 1);
  put_u32(os, static_cast<std::uint32_t>(set.site.layer));
  put_u32(os, static_cast<std::uint32_t>(set.site.head ? *set.site.head : -1));
  put_u32(os, static_cast<std::uint32_t>(set.width));
  put_u32(os, static_cast<std::uint32_t>(set.entries.size()));
  put_u32(os, static_cast<std::uint32_t>(set.n_pos));
  put_u32(os, static_cast<std::uint32_t>(set.n_neg));
  put_str(os, set.corpus_fingerprint);
  put_str(os, set.model_fingerprint);
  for (const auto& e : set.entries)
    for (float f : e.vector) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(os, bits);
    }
  for (const auto& e : set.entries) os.put(static_cast<char>(e.label));
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path);
}

LabeledActivationSet load_activation_set(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::NotFound, "cannot open activation set " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(ErrorKind::Format, path + ": not an activation set (bad magic)");
  const std::uint32_t version = get_u32(is, path);
  if (version != kActivationFormatVersion)
    throw Error(ErrorKind::Format, path + ": unsupported activation set version " + std::to_string(version));
  char kind = 0;
  is.read(&kind, 1);
  LabeledActivationSet set;
  set.site.kind = static_cast<SiteKind>(kind);
  set.site.layer = static_cast<int>(get_u32(is, path));
  const int head = static_cast<int>(get_u32(is, path));
  if (head >= 0) set.site.head = head;
  set.width = get_u32(is, path);
  const std::uint32_t count = get_u32(is, path);
  const std::uint32_t n_pos = get_u32(is, path);
  const std::uint32_t n_neg = get_u32(is, path);
  set.corpus_fingerprint = get_str(is, path);
  set.model_fingerprint = get_str(is, path);
  std::vector<std::vector<float>> rows(count, std::vector<float>(set.width));
  for (auto& r : rows)
    for (float& f : r) {
      const std::uint32_t bits = get_u32(is, path);
      std::memcpy(&f, &bits, 4);
    }
  for (std::uint32_t i = 0; i < count; ++i) {
    const int label = is.get();
    if (label == EOF) throw Error(ErrorKind::Format, path + ": truncated labels");
    set.add(std::move(rows[i]), static_cast<std::uint8_t>(label));
  }
  if (set.n_pos != n_pos || set.n_neg != n_neg)
    throw Error(ErrorKind::Format, path + ": header counts disagree with labels");
  return set;
}

}  // namespace actrev
