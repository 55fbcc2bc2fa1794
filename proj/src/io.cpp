#include "pivotkit/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pivotkit/errors.hpp"

namespace pk::io {

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path) {
  const std::string content = read_file(path);
  return fnv1a64(content.data(), content.size());
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << content;
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ConfigError("cannot rename " + tmp + " to " + path);
}

void atomic_write_binary(const std::string& path, const std::vector<char>& content) {
  atomic_write(path, std::string(content.begin(), content.end()));
}

// --- model container --------------------------------------------------------

void save_model(const std::string& path, const json& header,
                const std::vector<std::pair<std::string, const Eigen::VectorXf*>>& blobs) {
  json h = header;
  h["format"] = "pkmodel";
  h["tool"] = kToolVersion;
  json blob_list = json::array();
  for (const auto& [name, vec] : blobs)
    blob_list.push_back({{"name", name}, {"count", vec->size()}});
  h["blobs"] = blob_list;
  const std::string hs = h.dump();

  std::ostringstream out;
  out << "PKMODEL1\n";
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out << hs;
  for (const auto& [name, vec] : blobs)
    out.write(reinterpret_cast<const char*>(vec->data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(vec->size())));
  atomic_write(path, out.str());
}

ModelFile load_model(const std::string& path) {
  const std::string content = read_file(path);
  const std::string magic = "PKMODEL1\n";
  if (content.rfind(magic, 0) != 0) throw DependencyError(path + ": not a model file");
  std::size_t off = magic.size();
  std::uint64_t len = 0;
  std::memcpy(&len, content.data() + off, sizeof len);
  off += sizeof len;
  ModelFile mf;
  mf.header = json::parse(content.substr(off, len));
  off += len;
  for (const auto& b : mf.header.at("blobs")) {
    const std::string name = b.at("name");
    const auto count = b.at("count").get<Eigen::Index>();
    Eigen::VectorXf v(count);
    std::memcpy(v.data(), content.data() + off, sizeof(float) * static_cast<std::size_t>(count));
    off += sizeof(float) * static_cast<std::size_t>(count);
    mf.blobs.emplace(name, std::move(v));
  }
  return mf;
}

// --- demonstration datasets ---------------------------------------------------

json task_to_json(const cito::TaskSpec& task) {
  return json{{"kind", task.kind == cito::TaskKind::with_wall ? "with_wall" : "without_wall"},
              {"start", {task.start_pose.y, task.start_pose.z, task.start_pose.theta}},
              {"goal", {task.goal_pose.y, task.goal_pose.z, task.goal_pose.theta}},
              {"scene",
               {{"wall_present", task.scene.wall_present},
                {"wall_y", task.scene.wall_y},
                {"wall_height", task.scene.wall_height},
                {"table_z", task.scene.table_z},
                {"gravity", task.scene.gravity},
                {"virtual_wall_height", task.scene.virtual_wall_height},
                {"wall_capture", task.scene.wall_capture},
                {"virtual_wall_bevel", task.scene.virtual_wall_bevel},
                {"lip_capacity", task.scene.lip_capacity}}},
              {"horizon", task.horizon},
              {"dt", task.dt},
              {"n_robots", task.n_robots}};
}

cito::TaskSpec task_from_json(const json& j) {
  cito::TaskSpec task;
  task.kind = j.at("kind") == "with_wall" ? cito::TaskKind::with_wall
                                          : cito::TaskKind::without_wall;
  const auto& s = j.at("start");
  task.start_pose = scene::PlanarPose(s[0], s[1], s[2]);
  const auto& g = j.at("goal");
  task.goal_pose = scene::PlanarPose(g[0], g[1], g[2]);
  const auto& sc = j.at("scene");
  task.scene.wall_present = sc.at("wall_present");
  task.scene.wall_y = sc.at("wall_y");
  task.scene.wall_height = sc.at("wall_height");
  task.scene.table_z = sc.at("table_z");
  task.scene.gravity = sc.at("gravity");
  task.scene.virtual_wall_height = sc.at("virtual_wall_height");
  task.scene.wall_capture = sc.at("wall_capture");
  task.scene.virtual_wall_bevel = sc.at("virtual_wall_bevel");
  task.scene.lip_capacity = sc.at("lip_capacity");
  task.horizon = j.at("horizon");
  task.dt = j.at("dt");
  task.n_robots = j.at("n_robots");
  return task;
}

json params_to_json(const scene::PhysicalParams& p) {
  return json{{"mass", p.mass},
              {"half_len", p.geometry.half_len},
              {"half_wid", p.geometry.half_wid},
              {"mu_table", p.mu_table},
              {"mu_wall", p.mu_wall},
              {"mu_object", p.mu_object},
              {"mu_robot", p.mu_robot}};
}

scene::PhysicalParams params_from_json(const json& j) {
  scene::PhysicalParams p;
  p.mass = j.at("mass");
  p.geometry.half_len = j.at("half_len");
  p.geometry.half_wid = j.at("half_wid");
  p.mu_table = j.at("mu_table");
  p.mu_wall = j.at("mu_wall");
  p.mu_object = j.at("mu_object");
  p.mu_robot = j.at("mu_robot");
  return p;
}

namespace {

json vec2_list(const std::vector<Eigen::Vector2d>& v) {
  json out = json::array();
  for (const auto& e : v) out.push_back({e(0), e(1)});
  return out;
}

json force_list(const std::vector<scene::ContactForce>& v) {
  json out = json::array();
  for (const auto& f : v) out.push_back({f.normal_mag, f.tangential_mag});
  return out;
}

}  // namespace

void save_demos(const std::string& path, const cito::DemoDataset& ds) {
  std::ostringstream out;
  json header{{"format", "pivotkit-demos"},
              {"version", 1},
              {"tool", kToolVersion},
              {"task", task_to_json(ds.task)},
              {"mode", ds.mode == cito::FeasibilityLevel::dynamic ? "dynamic" : "kinematic"},
              {"seed", ds.seed},
              {"n", ds.records.size()},
              {"rejections", ds.rejection_count}};
  out << header.dump() << "\n";
  for (const auto& d : ds.records) {
    json r;
    r["params"] = params_to_json(d.params);
    r["dt"] = d.dt;
    r["feasibility"] =
        d.feasibility == cito::FeasibilityLevel::dynamic ? "dynamic" : "kinematic";
    json traj = json::array();
    for (const auto& q : d.object_traj) traj.push_back({q.y, q.z, q.theta});
    r["object_traj"] = traj;
    json rt = json::array();
    for (const auto& robot : d.robot_traj) rt.push_back(vec2_list(robot));
    r["robot_traj"] = rt;
    if (d.has_forces()) {
      json rf = json::array();
      for (const auto& robot : d.robot_forces) rf.push_back(force_list(robot));
      r["robot_forces"] = rf;
      json ef = json::array();
      for (const auto& cand : d.extrinsic_forces) ef.push_back(force_list(cand));
      r["extrinsic_forces"] = ef;
      json el = json::array();
      for (const auto& cand : d.extrinsic_locations) {
        json col = json::array();
        for (const auto& mp : cand) {
          if (mp.present)
            col.push_back({mp.location(0), mp.location(1)});
          else
            col.push_back(nullptr);
        }
        el.push_back(col);
      }
      r["extrinsic_locations"] = el;
    }
    out << r.dump() << "\n";
  }
  atomic_write(path, out.str());
}

cito::DemoDataset load_demos(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DependencyError(path + ": empty demo file");
  const json header = json::parse(line);
  if (header.value("format", "") != "pivotkit-demos")
    throw DependencyError(path + ": not a demo dataset");
  cito::DemoDataset ds;
  ds.task = task_from_json(header.at("task"));
  ds.mode = header.at("mode") == "dynamic" ? cito::FeasibilityLevel::dynamic
                                           : cito::FeasibilityLevel::kinematic;
  ds.seed = header.at("seed");
  ds.rejection_count = header.at("rejections");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json r = json::parse(line);
    cito::Demonstration d;
    d.params = params_from_json(r.at("params"));
    d.dt = r.at("dt");
    d.feasibility = r.at("feasibility") == "dynamic" ? cito::FeasibilityLevel::dynamic
                                                     : cito::FeasibilityLevel::kinematic;
    for (const auto& q : r.at("object_traj"))
      d.object_traj.push_back(scene::PlanarPose(q[0], q[1], q[2]));
    for (const auto& robot : r.at("robot_traj")) {
      std::vector<Eigen::Vector2d> tr;
      for (const auto& p : robot) tr.emplace_back(p[0], p[1]);
      d.robot_traj.push_back(std::move(tr));
    }
    if (r.contains("robot_forces")) {
      for (const auto& robot : r.at("robot_forces")) {
        std::vector<scene::ContactForce> fr;
        for (const auto& f : robot) fr.push_back({f[0], f[1]});
        d.robot_forces.push_back(std::move(fr));
      }
      for (const auto& cand : r.at("extrinsic_forces")) {
        std::vector<scene::ContactForce> fr;
        for (const auto& f : cand) fr.push_back({f[0], f[1]});
        d.extrinsic_forces.push_back(std::move(fr));
      }
      for (const auto& cand : r.at("extrinsic_locations")) {
        std::vector<cito::Demonstration::MaybePoint> col;
        for (const auto& p : cand) {
          cito::Demonstration::MaybePoint mp;
          if (!p.is_null()) {
            mp.present = true;
            mp.location = Eigen::Vector2d(p[0], p[1]);
          }
          col.push_back(mp);
        }
        d.extrinsic_locations.push_back(std::move(col));
      }
    }
    ds.records.push_back(std::move(d));
  }
  return ds;
}

void save_curve(const std::string& path, const std::vector<std::pair<long, double>>& points) {
  std::ostringstream out;
  out << "# env_steps success_rate\n";
  for (const auto& [s, v] : points) {
    json num = v;  // shortest round-trip representation
    out << s << " " << num.dump() << "\n";
  }
  atomic_write(path, out.str());
}

std::vector<std::pair<long, double>> load_curve(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::pair<long, double>> points;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long s;
    double v;
    ls >> s >> v;
    points.emplace_back(s, v);
  }
  return points;
}

void save_csv(const std::string& path, const std::vector<std::string>& columns,
              const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  for (std::size_t i = 0; i < columns.size(); ++i)
    out << columns[i] << (i + 1 < columns.size() ? "," : "\n");
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i) out << row[i] << (i + 1 < row.size() ? "," : "\n");
  atomic_write(path, out.str());
}

}  // namespace pk::io
