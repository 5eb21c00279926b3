#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isrkd/image.hpp"

namespace isrkd {

enum class Domain { source, target };

std::string domain_name(Domain d);
Domain parse_domain(const std::string& name);  // "source" | "target"; ConfigError otherwise
inline Domain other_domain(Domain d) { return d == Domain::source ? Domain::target : Domain::source; }

struct DomainSample {
  Image hr;          // 128x128x3, values on the 1/255 grid
  Image lr;          // degrade(hr, kDefaultNoiseSigma, seed)
  EdgeMap hr_edges;  // canny_edges(luma(hr))
  Domain domain = Domain::source;
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
};

// Builds lr and hr_edges from an HR image.
DomainSample make_sample(Image hr, Domain domain, std::uint64_t id, std::uint64_t seed);
// True when lr and hr_edges match what make_sample would produce.
bool sample_is_consistent(const DomainSample& s);

// Smooth "photo-like" faces: layered gradients, a soft elliptical face with
// soft features, low-amplitude smooth texture.
std::vector<DomainSample> gen_source(std::uint64_t seed, std::size_t n);
// "Cartoon-like" faces: 4-8 flat-colour regions with hard edges and dark outlines.
std::vector<DomainSample> gen_target(std::uint64_t seed, std::size_t n);
std::vector<DomainSample> gen_domain(Domain domain, std::uint64_t seed, std::size_t n);

// Disjoint, exhaustive, seed-deterministic split; train side gets round(frac * n).
std::pair<std::vector<DomainSample>, std::vector<DomainSample>> split(std::vector<DomainSample> samples,
                                                                      double train_frac,
                                                                      std::uint64_t seed);

// Domain statistics.
double edge_density(const EdgeMap& edges);
// Mean central-difference gradient magnitude of the luma channel.
double mean_gradient_magnitude(const Image& rgb);

// Writes hr_<id>.ppm per sample plus manifest.csv ("id,domain,seed").
void export_samples(const std::string& dir, std::span<const DomainSample> samples);
// Reads a directory in the export layout and rebuilds LR and edges.
std::vector<DomainSample> ingest_samples(const std::string& dir);

std::vector<Image> hr_images(std::span<const DomainSample> samples);
std::vector<Image> lr_images(std::span<const DomainSample> samples);

}  // namespace isrkd
