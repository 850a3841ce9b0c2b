#ifndef LISYN_IO_HPP
#define LISYN_IO_HPP

#include <string>

#include <json.hpp>

#include "lisyn/particles.hpp"

namespace lisyn {

using nlohmann::json;

// One double, 17 significant digits: enough to round-trip any finite value.
std::string format_double(double x);

// CSV with header x_0,...,x_{d-1},weight; one row per particle.
void write_particles_csv(const ParticleSet& ps, const std::string& path);
ParticleSet read_particles_csv(const std::string& path);

// JSON record {dim, points, weights}.
json particles_to_json(const ParticleSet& ps);
ParticleSet particles_from_json(const json& j);
void write_particles_json(const ParticleSet& ps, const std::string& path);
ParticleSet read_particles_json(const std::string& path);

// Loads either format, keyed on the file extension (.csv / .json).
ParticleSet read_particles(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
json read_json_file(const std::string& path);
void write_json_file(const json& j, const std::string& path);

}  // namespace lisyn

#endif
