#include "lisyn/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "lisyn/errors.hpp"

namespace lisyn {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << content;
  if (!out) throw ConfigError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON: " + path);
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

void write_particles_csv(const ParticleSet& ps, const std::string& path) {
  validate(ps);
  std::ostringstream out;
  for (Eigen::Index c = 0; c < ps.dim(); ++c) out << "x_" << c << ",";
  out << "weight\n";
  for (Eigen::Index i = 0; i < ps.size(); ++i) {
    for (Eigen::Index c = 0; c < ps.dim(); ++c) out << format_double(ps.points(i, c)) << ",";
    out << format_double(ps.weights[i]) << "\n";
  }
  write_text_file(path, out.str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, const std::string& path) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw ConfigError("bad numeric field '" + s + "' in " + path);
  return x;
}

}  // namespace

ParticleSet read_particles_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV: " + path);
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "weight")
    throw ConfigError("expected header x_0,...,weight in " + path);
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;

  std::vector<double> coords, weights;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != d + 1)
      throw ConfigError("row width mismatch in " + path);
    for (Eigen::Index c = 0; c < d; ++c) coords.push_back(parse_double(fields[c], path));
    weights.push_back(parse_double(fields.back(), path));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(weights.size());
  if (n == 0) throw ConfigError("no data rows in " + path);

  ParticleSet ps;
  ps.points.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < d; ++c) ps.points(i, c) = coords[i * d + c];
  ps.weights = Eigen::Map<Vector>(weights.data(), n);
  validate(ps);
  return ps;
}

json particles_to_json(const ParticleSet& ps) {
  validate(ps);
  json points = json::array();
  for (Eigen::Index i = 0; i < ps.size(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < ps.dim(); ++c) row.push_back(ps.points(i, c));
    points.push_back(std::move(row));
  }
  json weights = json::array();
  for (Eigen::Index i = 0; i < ps.size(); ++i) weights.push_back(ps.weights[i]);
  return json{{"dim", ps.dim()}, {"points", std::move(points)}, {"weights", std::move(weights)}};
}

ParticleSet particles_from_json(const json& j) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("points") || !j.contains("weights"))
    throw ConfigError("particle JSON must have {dim, points, weights}");
  const Eigen::Index d = j.at("dim").get<Eigen::Index>();
  const auto& pts = j.at("points");
  const auto& wts = j.at("weights");
  if (!pts.is_array() || !wts.is_array() || pts.size() != wts.size())
    throw ConfigError("points/weights arrays disagree");
  const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
  if (n == 0) throw ConfigError("empty particle JSON");

  ParticleSet ps;
  ps.points.resize(n, d);
  ps.weights.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = pts.at(i);
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != d)
      throw ConfigError("point row has wrong dimension");
    for (Eigen::Index c = 0; c < d; ++c) ps.points(i, c) = row.at(c).get<double>();
    ps.weights[i] = wts.at(i).get<double>();
  }
  validate(ps);
  return ps;
}

void write_particles_json(const ParticleSet& ps, const std::string& path) {
  write_json_file(particles_to_json(ps), path);
}

ParticleSet read_particles_json(const std::string& path) {
  return particles_from_json(read_json_file(path));
}

ParticleSet read_particles(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") return read_particles_json(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return read_particles_csv(path);
  throw ConfigError("unknown particle file extension (want .csv or .json): " + path);
}

}  // namespace lisyn
