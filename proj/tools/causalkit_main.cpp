// SPDX-License-Identifier: MIT
//
// causalkit command-line interface.  Every subcommand prints one JSON report
// to standard output and communicates its decision through the exit code:
//
//   0  decided affirmative / success
//   1  decided negative (non-member, violated, not synthesizable)
//   2  unknown / solver failure
//   64 usage error
//
// Batch mode (--batch FILE [--jobs N]) runs one job per line of FILE, each
// line being the argument list of a single subcommand invocation, in worker
// subprocesses; the collected reports are emitted as a JSON array.

#include <array>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "causalkit/catalog.hpp"
#include "causalkit/polytopes.hpp"
#include "causalkit/seesaw.hpp"

namespace ck = causalkit;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// report plumbing
// ---------------------------------------------------------------------------

/// FNV-1a content hash used to pin the exact inputs of a report.
std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct Report {
  json inputs = json::object();
  json tolerances = json::object();
  json result = json::object();
  std::string command;
  std::optional<std::uint64_t> seed;

  void input_file(const std::string& role, const std::string& path) {
    inputs[role] = {{"path", path}, {"fnv1a64", file_hash(path)}};
  }
  void input_name(const std::string& role, const std::string& name) {
    inputs[role] = {{"name", name}};
  }

  json envelope() const {
    json j = {{"tool", "causalkit"},
              {"version", kVersion},
              {"command", command},
              {"inputs", inputs},
              {"tolerances", tolerances},
              {"result", result}};
    if (seed) j["seed"] = *seed;
    return j;
  }
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  return json::parse(in);
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// object (de)serialization helpers
// ---------------------------------------------------------------------------

json process_to_json(const ck::ProcessMatrix& w) {
  return {{"op", w.op().to_json()}, {"parties", w.parties()}};
}

ck::ProcessMatrix process_from_json(const json& j) {
  return ck::ProcessMatrix(ck::LabeledOperator::from_json(j.at("op")),
                           j.at("parties").get<std::vector<int>>());
}

json game_to_json(const ck::GameFunctional& g) {
  const auto& sc = g.scenario();
  json rows = json::array();
  auto xs = sc.input_tuples();
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    json row = json::array();
    const std::size_t na = sc.outcome_tuples(xs[xi]).size();
    for (std::size_t ai = 0; ai < na; ++ai)
      row.push_back(g.coefficient(static_cast<long>(xi), static_cast<long>(ai)));
    rows.push_back(std::move(row));
  }
  return {{"scenario", sc.to_json()}, {"coefficients", rows}};
}

ck::GameFunctional game_from_json(const json& j) {
  ck::Scenario sc = ck::Scenario::from_json(j.at("scenario"));
  auto rows = j.at("coefficients").get<std::vector<std::vector<double>>>();
  ck::detail::ScenarioIndex idx(sc);
  return ck::GameFunctional(sc, [&](const std::vector<int>& x,
                                    const std::vector<int>& a) {
    long xi = idx.sc.input_index(x);
    long ai = idx.sc.outcome_index(x, a);
    return rows.at(xi).at(ai);
  });
}

ck::GameFunctional load_game(const std::string& preset,
                             const std::string& file, Report& rep) {
  if (!preset.empty()) {
    rep.input_name("game", preset);
    return ck::GameFunctional::preset(preset);
  }
  rep.input_file("game", file);
  return game_from_json(load_json(file));
}

ck::Correlation load_correlation(const std::string& file,
                                 const std::string& named, Report& rep) {
  if (!named.empty()) {
    rep.input_name("correlation", named);
    return ck::build_correlation(named);
  }
  rep.input_file("correlation", file);
  return ck::Correlation::from_json(load_json(file));
}

ck::ProcessMatrix load_process(const std::string& file,
                               const std::string& catalog, double alpha,
                               int sign, Report& rep) {
  if (!catalog.empty()) {
    rep.input_name("process", catalog);
    ck::CatalogKey key{catalog};
    key.alpha = alpha;
    key.sign = sign;
    return ck::build_process(key);
  }
  rep.input_file("process", file);
  return process_from_json(load_json(file));
}

ck::PolytopeTag parse_polytope(const std::string& s) {
  for (auto t : {ck::PolytopeTag::conv_fo, ck::PolytopeTag::nio,
                 ck::PolytopeTag::nio_prime, ck::PolytopeTag::causal,
                 ck::PolytopeTag::all})
    if (s == ck::polytope_name(t)) return t;
  throw CLI::ValidationError("polytope", "unknown polytope: " + s);
}

json decomposition_to_json(const ck::CausalDecomposition& d) {
  json orders = json::array();
  for (const auto& o : d.orders) orders.push_back(o);
  json weights = json::array();
  for (std::size_t xi = 0; xi < d.values.size(); ++xi) {
    json row = json::array();
    for (std::size_t oi = 0; oi < d.orders.size(); ++oi)
      row.push_back(d.order_weight(static_cast<long>(xi),
                                   static_cast<long>(oi)));
    weights.push_back(std::move(row));
  }
  return {{"orders", orders}, {"order_weights_per_setting", weights}};
}

std::string verdict_name(ck::MembershipResult::Verdict v) {
  switch (v) {
    case ck::MembershipResult::Verdict::member: return "member";
    case ck::MembershipResult::Verdict::non_member: return "non-member";
    default: return "unknown";
  }
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct CommonOpts {
  std::string out;
  double tol_feas = 1e-7;
  double tol_member = 1e-8;
  std::uint64_t seed = 0;
};

int emit(const Report& rep, const CommonOpts& common, int code) {
  json j = rep.envelope();
  j["exit"] = code;
  std::cout << j.dump(2) << std::endl;
  if (!common.out.empty()) write_json(common.out, j);
  return code;
}

int cmd_check_class(const std::string& process_file,
                    const std::string& catalog_name, double alpha, int sign,
                    const std::string& cls, const std::string& cert_out,
                    const CommonOpts& common) {
  Report rep;
  rep.command = "check-class";
  auto w = load_process(process_file, catalog_name, alpha, sign, rep);
  auto tag = ck::ClassTag::parse(cls);
  ck::MembershipOptions mo;
  mo.eps = common.tol_member;
  rep.tolerances = {{"tol_member", mo.eps}, {"eps_screen", mo.eps_screen}};
  auto r = ck::check_membership(w, tag, mo);
  rep.result["class"] = tag.str();
  rep.result["verdict"] = verdict_name(r.verdict);
  rep.result["slack"] = r.slack;
  rep.result["residuals"] = r.residuals;
  if (r.certificate) {
    if (!cert_out.empty()) {
      write_json(cert_out, r.certificate->to_json());
      rep.result["certificate_path"] = cert_out;
    } else {
      rep.result["certificate"] = r.certificate->to_json();
    }
  }
  if (r.witness) {
    rep.result["witness"] = r.witness->to_json();
    rep.result["witness_offset"] = r.witness_offset;
  }
  int code = r.verdict == ck::MembershipResult::Verdict::member    ? 0
             : r.verdict == ck::MembershipResult::Verdict::non_member ? 1
                                                                      : 2;
  return emit(rep, common, code);
}

int cmd_check_polytope(const std::string& corr_file, const std::string& named,
                       const std::string& polytope, const CommonOpts& common) {
  Report rep;
  rep.command = "check-polytope";
  auto p = load_correlation(corr_file, named, rep);
  auto tag = parse_polytope(polytope);
  rep.tolerances = {{"tol_feas", common.tol_feas}};
  auto r = ck::membership(p, tag);
  rep.result["polytope"] = ck::polytope_name(tag);
  rep.result["member"] = r.member;
  rep.result["mu"] = r.mu;
  if (r.decomposition)
    rep.result["decomposition"] = decomposition_to_json(*r.decomposition);
  if (r.witness) rep.result["witness"] = game_to_json(*r.witness);
  return emit(rep, common, r.member ? 0 : 1);
}

int cmd_max_game(const std::string& preset, const std::string& game_file,
                 const std::string& polytope, const CommonOpts& common) {
  Report rep;
  rep.command = "max-game";
  auto g = load_game(preset, game_file, rep);
  auto tag = parse_polytope(polytope);
  rep.tolerances = {{"tol_feas", common.tol_feas}};
  auto r = ck::max_game(g, tag);
  rep.result["polytope"] = ck::polytope_name(tag);
  rep.result["value"] = r.value;
  rep.result["argmax"] = r.argmax.to_json();
  return emit(rep, common, 0);
}

int cmd_eval_game(const std::string& preset, const std::string& game_file,
                  const std::string& corr_file, const std::string& named,
                  const CommonOpts& common) {
  Report rep;
  rep.command = "eval-game";
  auto g = load_game(preset, game_file, rep);
  auto p = load_correlation(corr_file, named, rep);
  rep.result["value"] = g.value(p);
  return emit(rep, common, 0);
}

int cmd_distance(const std::string& corr_file, const std::string& named,
                 const std::string& polytope, const std::string& witness_out,
                 const CommonOpts& common) {
  Report rep;
  rep.command = "distance";
  auto p = load_correlation(corr_file, named, rep);
  auto tag = parse_polytope(polytope);
  rep.tolerances = {{"tol_feas", common.tol_feas}};
  auto r = ck::lp_distance(p, tag);
  rep.result["polytope"] = ck::polytope_name(tag);
  rep.result["r_star"] = r.r_star;
  if (r.witness) {
    json jw = game_to_json(*r.witness);
    if (!witness_out.empty()) {
      write_json(witness_out, jw);
      rep.result["witness_path"] = witness_out;
    } else {
      rep.result["witness"] = jw;
    }
    rep.result["witness_value_at_p"] = r.witness->value(p);
  }
  return emit(rep, common, 0);
}

ck::Scenario parse_scenario(const std::string& s) {
  if (s.rfind("lazy:", 0) == 0)
    return ck::Scenario::lazy(std::stoi(s.substr(5)));
  return ck::Scenario::from_json(load_json(s));
}

int cmd_vertices(const std::string& scenario, const std::string& polytope,
                 bool full, const CommonOpts& common) {
  Report rep;
  rep.command = "vertices";
  rep.input_name("scenario", scenario);
  auto sc = parse_scenario(scenario);
  auto tag = parse_polytope(polytope);
  auto verts = ck::enumerate_vertices(sc, tag);
  rep.result["polytope"] = ck::polytope_name(tag);
  rep.result["count"] = verts.size();
  if (tag == ck::PolytopeTag::causal) {
    // split the census into static-order and genuinely dynamical vertices
    auto fo = ck::enumerate_vertices(sc, ck::PolytopeTag::conv_fo);
    std::set<ck::DetVertex> fos(fo.begin(), fo.end());
    std::size_t stat = 0;
    for (const auto& v : verts)
      if (fos.count(v)) ++stat;
    rep.result["fixed_order"] = stat;
    rep.result["dynamical"] = verts.size() - stat;
  }
  if (full) {
    json jv = json::array();
    for (const auto& v : verts) jv.push_back(v.outcome);
    rep.result["vertices"] = std::move(jv);
  }
  return emit(rep, common, 0);
}

int cmd_catalog(const std::string& name, double alpha, int sign,
                const CommonOpts& common) {
  Report rep;
  rep.command = "catalog";
  if (name.empty()) {
    rep.result["processes"] = {"w_convfo", "w_cs",   "w_nicc",
                               "w_niqc",   "w_niqc_prime", "w_qs",
                               "w_supfo",  "w_pm_alpha"};
    rep.result["instrument_sets"] = {"lazy_classical", "lazy_classical_mark",
                                     "readout_classical"};
    rep.result["correlations"] = {"fo_i4_max", "i4_causal_max", "saturate_nio",
                                  "saturate_nio_prime", "i3_dynamical"};
    return emit(rep, common, 0);
  }
  rep.input_name("process", name);
  ck::CatalogKey key{name};
  key.alpha = alpha;
  key.sign = sign;
  auto w = ck::build_process(key);
  rep.result["process"] = process_to_json(w);
  auto v = ck::is_valid_process(w, ck::ValidityMode::normalized);
  rep.result["valid"] = v.ok;
  rep.result["validity_residual"] = v.worst_residual;
  return emit(rep, common, 0);
}

int cmd_from_correlation(const std::string& corr_file,
                         const std::string& named, const std::string& cls,
                         const CommonOpts& common) {
  Report rep;
  rep.command = "from-correlation";
  auto p = load_correlation(corr_file, named, rep);
  rep.tolerances = {{"roundtrip_tol", 1e-9}};
  ck::ProcessMatrix w = [&] {
    if (cls == "qc-convfo") return ck::process_from_convfo_correlation(p);
    if (cls == "qc-cc") return ck::process_from_causal_correlation(p);
    throw CLI::ValidationError("class",
                               "synthesis supports qc-convfo and qc-cc only");
  }();
  auto instr = ck::build_instruments("readout_classical", p.scenario());
  auto q = ck::born_rule_correlation(w, instr);
  double dev = 0;
  for (std::size_t xi = 0; xi < q.table().size(); ++xi)
    for (std::size_t ai = 0; ai < q.table()[xi].size(); ++ai)
      dev = std::max(dev, std::abs(q.p(static_cast<long>(xi),
                                       static_cast<long>(ai)) -
                                   p.p(static_cast<long>(xi),
                                       static_cast<long>(ai))));
  rep.result["class"] = cls;
  rep.result["process"] = process_to_json(w);
  rep.result["roundtrip_deviation"] = dev;
  return emit(rep, common, dev <= 1e-9 ? 0 : 2);
}

int cmd_seesaw(const std::string& preset, const std::string& game_file,
               const std::string& cls, int seeds, int max_iters, double eps,
               std::vector<int> dims, const CommonOpts& common) {
  Report rep;
  rep.command = "seesaw";
  rep.seed = common.seed;
  auto g = load_game(preset, game_file, rep);
  auto tag = ck::ClassTag::parse(cls);
  rep.tolerances = {{"solver_eps", eps}};
  auto r = ck::seesaw_optimize(g, tag, std::move(dims), seeds, max_iters, eps);
  rep.result = r.to_json();
  rep.result["class"] = tag.str();
  return emit(rep, common, 0);
}

int cmd_verify_cert(const std::string& process_file,
                    const std::string& catalog_name, double alpha, int sign,
                    const std::string& cert_file, const std::string& cls,
                    const CommonOpts& common) {
  Report rep;
  rep.command = "verify-cert";
  auto w = load_process(process_file, catalog_name, alpha, sign, rep);
  ck::ClassCertificate cert = [&] {
    if (!cert_file.empty()) {
      rep.input_file("certificate", cert_file);
      return ck::ClassCertificate::from_json(load_json(cert_file));
    }
    if (catalog_name.empty() || cls.empty())
      throw CLI::ValidationError(
          "cert", "--cert FILE or --catalog NAME with --class required");
    rep.input_name("certificate", catalog_name + ":" + cls);
    return ck::build_certificate(ck::CatalogKey{catalog_name},
                                 ck::ClassTag::parse(cls));
  }();
  auto r = ck::verify_certificate(w, cert);
  rep.tolerances = {{"threshold", r.threshold}};
  rep.result["ok"] = r.ok;
  rep.result["worst_residual"] = r.worst_residual;
  rep.result["class"] = cert.tag.str();
  if (!r.ok) rep.result["failing_constraint"] = r.failing_constraint;
  return emit(rep, common, r.ok ? 0 : 1);
}

// ---------------------------------------------------------------------------
// batch mode: one subcommand invocation per line, workers in subprocesses
// ---------------------------------------------------------------------------

int run_batch(const std::string& self, const std::string& batch_file,
              int jobs) {
  std::ifstream in(batch_file);
  if (!in) throw std::runtime_error("cannot open batch file: " + batch_file);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') lines.push_back(line);

  std::vector<json> reports(lines.size());
  std::vector<int> codes(lines.size(), 0);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < lines.size();) {
      std::string cmd = self + " " + lines[i] + " 2>/dev/null";
      std::array<char, 4096> buf;
      std::string out;
      FILE* p = popen(cmd.c_str(), "r");
      if (!p) {
        codes[i] = 2;
        continue;
      }
      std::size_t n;
      while ((n = fread(buf.data(), 1, buf.size(), p)) > 0)
        out.append(buf.data(), n);
      codes[i] = WEXITSTATUS(pclose(p));
      try {
        reports[i] = json::parse(out);
      } catch (...) {
        reports[i] = {{"error", "unparseable worker output"},
                      {"exit", codes[i]}};
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::max(1, jobs); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  json arr = json::array();
  int worst = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    arr.push_back(reports[i]);
    worst = std::max(worst, codes[i]);
  }
  std::cout << arr.dump(2) << std::endl;
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"causalkit: numerical toolkit for causal structure of quantum "
               "processes"};
  app.require_subcommand(0, 1);

  CommonOpts common;
  std::string batch_file;
  int jobs = 1;
  app.add_option("--batch", batch_file,
                 "file with one subcommand invocation per line");
  app.add_option("--jobs", jobs, "worker parallelism for --batch");

  std::string process_file, catalog_name, cls, cert_out, cert_file;
  std::string corr_file, named, polytope, preset, game_file, witness_out;
  std::string scenario_str, catalog_pos;
  double alpha = 1.0 / std::sqrt(2.0);
  int sign = 1;
  bool full = false;
  int seeds = 20, max_iters = 50;
  double eps = 1e-8;
  std::vector<int> dims;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--out", common.out, "also write the report to this file");
    c->add_option("--tol-feas", common.tol_feas, "LP feasibility tolerance");
    c->add_option("--tol-member", common.tol_member,
                  "SDP membership solve accuracy");
    c->add_option("--seed", common.seed, "seed echoed into the report");
  };
  auto add_process = [&](CLI::App* c) {
    c->add_option("--process", process_file, "process matrix JSON file");
    c->add_option("--catalog", catalog_name, "named catalog process");
    c->add_option("--alpha", alpha, "two-party core strength");
    c->add_option("--sign", sign, "two-party core sign (+1/-1)");
  };
  auto add_corr = [&](CLI::App* c) {
    c->add_option("--correlation", corr_file, "correlation JSON file");
    c->add_option("--named", named, "named catalog correlation");
  };
  auto add_game = [&](CLI::App* c) {
    c->add_option("--game", preset, "game preset (lgyni, i3, i4, i4prime)");
    c->add_option("--game-file", game_file, "game functional JSON file");
  };

  auto* c1 = app.add_subcommand("check-class", "SDP class membership");
  add_process(c1);
  c1->add_option("--class", cls, "circuit class tag")->required();
  c1->add_option("--certificate-out", cert_out, "write certificate here");
  add_common(c1);

  auto* c2 = app.add_subcommand("check-polytope", "LP polytope membership");
  add_corr(c2);
  c2->add_option("--polytope", polytope, "polytope tag")->required();
  add_common(c2);

  auto* c3 = app.add_subcommand("max-game", "maximize a game over a polytope");
  add_game(c3);
  c3->add_option("--polytope", polytope, "polytope tag")->required();
  add_common(c3);

  auto* c4 = app.add_subcommand("eval-game", "evaluate a game functional");
  add_game(c4);
  add_corr(c4);
  add_common(c4);

  auto* c5 = app.add_subcommand("distance", "LP distance to a polytope");
  add_corr(c5);
  c5->add_option("--polytope", polytope, "polytope tag")->required();
  c5->add_option("--witness-out", witness_out, "write witness game here");
  add_common(c5);

  auto* c6 = app.add_subcommand("vertices", "deterministic vertex census");
  c6->add_option("--scenario", scenario_str, "lazy:N or scenario JSON file")
      ->required();
  c6->add_option("--polytope", polytope, "polytope tag")->required();
  c6->add_flag("--full", full, "include the vertex outcome tables");
  add_common(c6);

  auto* c7 = app.add_subcommand("catalog", "named processes of the library");
  c7->add_option("name", catalog_pos, "process name (empty: list all)");
  c7->add_option("--alpha", alpha, "two-party core strength");
  c7->add_option("--sign", sign, "two-party core sign (+1/-1)");
  add_common(c7);

  auto* c8 = app.add_subcommand("from-correlation",
                                "synthesize a circuit from a correlation");
  add_corr(c8);
  c8->add_option("--class", cls, "qc-convfo or qc-cc")->required();
  add_common(c8);

  auto* c9 = app.add_subcommand("seesaw", "alternating game optimization");
  add_game(c9);
  c9->add_option("--class", cls, "circuit class tag")->required();
  c9->add_option("--seeds", seeds, "number of random starts");
  c9->add_option("--max-iters", max_iters, "sweep limit per start");
  c9->add_option("--eps", eps, "half-step solver accuracy");
  c9->add_option("--dims", dims, "per-party dimensions (default qubits)");
  add_common(c9);

  auto* c10 = app.add_subcommand("verify-cert",
                                 "re-verify a class certificate exactly");
  add_process(c10);
  c10->add_option("--cert", cert_file, "certificate JSON file");
  c10->add_option("--class", cls, "class for a catalog certificate");
  add_common(c10);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!batch_file.empty()) return run_batch(argv[0], batch_file, jobs);
    if (c1->parsed())
      return cmd_check_class(process_file, catalog_name, alpha, sign, cls,
                             cert_out, common);
    if (c2->parsed()) return cmd_check_polytope(corr_file, named, polytope,
                                                common);
    if (c3->parsed()) return cmd_max_game(preset, game_file, polytope, common);
    if (c4->parsed())
      return cmd_eval_game(preset, game_file, corr_file, named, common);
    if (c5->parsed())
      return cmd_distance(corr_file, named, polytope, witness_out, common);
    if (c6->parsed()) return cmd_vertices(scenario_str, polytope, full, common);
    if (c7->parsed()) return cmd_catalog(catalog_pos, alpha, sign, common);
    if (c8->parsed()) return cmd_from_correlation(corr_file, named, cls,
                                                  common);
    if (c9->parsed())
      return cmd_seesaw(preset, game_file, cls, seeds, max_iters, eps, dims,
                        common);
    if (c10->parsed())
      return cmd_verify_cert(process_file, catalog_name, alpha, sign,
                             cert_file, cls, common);
    std::cerr << app.help() << std::endl;
    return 64;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 64;
  } catch (const ck::BadParameter& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return 64;
  } catch (const ck::NotConvFO& e) {
    std::cout << json{{"tool", "causalkit"},
                      {"version", kVersion},
                      {"error", e.what()},
                      {"exit", 1}}
                     .dump(2)
              << std::endl;
    return 1;
  } catch (const ck::NotCausal& e) {
    std::cout << json{{"tool", "causalkit"},
                      {"version", kVersion},
                      {"error", e.what()},
                      {"exit", 1}}
                     .dump(2)
              << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    std::cout << json{{"tool", "causalkit"},
                      {"version", kVersion},
                      {"error", e.what()},
                      {"exit", 2}}
                     .dump(2)
              << std::endl;
    return 2;
  }
}
