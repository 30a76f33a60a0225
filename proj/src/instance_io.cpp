#include "phaseflow/csv.hpp"
#include "phaseflow/errors.hpp"
#include "phaseflow/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace phaseflow {

void write_instance(const std::filesystem::path& path, const Instance& inst) {
  std::ostringstream out;
  out << "# n=" << inst.n << '\n'
      << "# alpha=" << csv::format(inst.alpha) << '\n'
      << "# samples=" << inst.samples() << '\n'
      << "# seed=" << inst.seed << '\n'
      << "# label_mode=" << to_string(inst.label_mode) << '\n'
      << "# teacher=" << (inst.teacher ? 1 : 0) << '\n';
  if (inst.teacher) {
    out << "teacher";
    for (Eigen::Index i = 0; i < inst.teacher->size(); ++i) out << ',' << csv::format((*inst.teacher)[i]);
    out << '\n';
  }
  for (Eigen::Index r = 0; r < inst.samples(); ++r) {
    for (Eigen::Index c = 0; c < inst.sensing.cols(); ++c) {
      out << csv::format(inst.sensing(r, c)) << ',';
    }
    out << csv::format(inst.labels[r]) << '\n';
  }
  csv::write_text(path, out.str());
}

Instance read_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open instance file " + path.string());
  std::map<std::string, std::string> meta;
  std::string line;
  std::vector<std::string> body;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(1, eq - 1);
      while (!key.empty() && key.front() == ' ') key.erase(key.begin());
      meta[key] = line.substr(eq + 1);
      continue;
    }
    body.push_back(line);
  }
  for (const char* key : {"n", "alpha", "samples", "seed", "label_mode", "teacher"}) {
    if (!meta.count(key)) throw ParameterError("instance header lacks '" + std::string(key) + "'");
  }
  Instance inst;
  inst.n = static_cast<int>(csv::parse_int(meta["n"]));
  inst.alpha = csv::parse_double(meta["alpha"]);
  inst.seed = std::stoull(meta["seed"]);
  inst.label_mode = label_mode_from_string(meta["label_mode"]);
  const auto samples = static_cast<Eigen::Index>(csv::parse_int(meta["samples"]));
  const bool has_teacher = csv::parse_int(meta["teacher"]) != 0;

  std::size_t cursor = 0;
  if (has_teacher) {
    if (body.empty()) throw ParameterError("instance file lacks the teacher row");
    auto fields = csv::split(body[cursor++]);
    if (fields.size() != static_cast<std::size_t>(inst.n) + 1 || fields[0] != "teacher") {
      throw ParameterError("malformed teacher row");
    }
    Vector t(inst.n);
    for (int i = 0; i < inst.n; ++i) t[i] = csv::parse_double(fields[static_cast<std::size_t>(i) + 1]);
    inst.teacher = std::move(t);
  }
  if (body.size() - cursor != static_cast<std::size_t>(samples)) {
    throw ParameterError("instance file has " + std::to_string(body.size() - cursor) +
                         " sample rows, header says " + std::to_string(samples));
  }
  inst.sensing.resize(samples, inst.n);
  inst.labels.resize(samples);
  for (Eigen::Index r = 0; r < samples; ++r) {
    auto fields = csv::split(body[cursor++]);
    if (fields.size() != static_cast<std::size_t>(inst.n) + 1) throw ParameterError("malformed sample row");
    for (int c = 0; c < inst.n; ++c) inst.sensing(r, c) = csv::parse_double(fields[static_cast<std::size_t>(c)]);
    inst.labels[r] = csv::parse_double(fields.back());
  }
  validate(inst);
  return inst;
}

}  // namespace phaseflow
