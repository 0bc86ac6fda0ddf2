#include "quadtail/cramer.hpp"
#include "quadtail/edgeworth.hpp"
#include "quadtail/errors.hpp"
#include "quadtail/estimate.hpp"
#include "quadtail/gaussref.hpp"
#include "quadtail/io.hpp"
#include "quadtail/model.hpp"
#include "quadtail/tilt.hpp"
#include "quadtail/verify.hpp"
#include "quadtail/version.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

using namespace quadtail;
using nlohmann::ordered_json;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Rows are stored as JSON values so one table renders to either format.
struct Table {
  std::vector<std::string> columns;
  std::vector<ordered_json> rows;
};

std::string csv_cell(const ordered_json& v) {
  if (v.is_null()) return "";
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

// Non-finite doubles have no JSON literal; they go out as strings.
ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

struct Common {
  std::string output;
  std::string format;
  int workers = 1;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool default_seed = false;  // verify runs with a fixed seed when none is given
};

class Runner {
 public:
  Runner(CLI::App* sub, Common* common) : sub_(sub), common_(common) {}

  bool has_seed() const {
    return common_->default_seed || (common_->seed_opt && common_->seed_opt->count() > 0);
  }

  std::uint64_t require_seed(const std::string& why) const {
    if (!has_seed()) throw UsageError("--seed is required (" + why + ")");
    return common_->seed;
  }

  // Hash of every option that can change the data rows.
  std::string config_hash() const {
    static const std::vector<std::string> skip{"--output", "--format", "--workers", "--help", "--config"};
    std::map<std::string, std::string> kv;
    for (const CLI::Option* opt : sub_->get_options()) {
      const std::string name = opt->get_name();
      if (std::find(skip.begin(), skip.end(), name) != skip.end() || opt->count() == 0) continue;
      std::string joined;
      for (const auto& r : opt->results()) joined += r + '\x1f';
      kv[name] = joined;
    }
    std::string text = sub_->get_name();
    for (const auto& [k, v] : kv) text += '\x1e' + k + '=' + v;
    return hex64(fnv1a64(text));
  }

  void emit(const Table& table, double runtime_ms) const {
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!common_->output.empty()) {
      file.open(common_->output, std::ios::binary);
      if (!file) throw UsageError("cannot open output file " + common_->output);
      out = &file;
    }
    const std::string seed = has_seed() ? std::to_string(common_->seed) : "none";
    if (common_->format == "csv") {
      *out << "# quadtail version=" << kVersion << " command=" << sub_->get_name() << " seed=" << seed
           << " config_hash=" << config_hash() << " runtime_ms=" << format_double(runtime_ms) << '\n';
      *out << csv_row(table.columns) << '\n';
      for (const auto& row : table.rows) {
        std::vector<std::string> cells;
        for (const auto& c : table.columns) cells.push_back(csv_cell(row.contains(c) ? row.at(c) : ordered_json()));
        *out << csv_row(cells) << '\n';
      }
    } else {
      ordered_json head;
      head["version"] = kVersion;
      head["command"] = sub_->get_name();
      head["seed"] = has_seed() ? ordered_json(common_->seed) : ordered_json();
      head["config_hash"] = config_hash();
      head["runtime_ms"] = runtime_ms;
      *out << ordered_json{{"header", head}}.dump() << '\n';
      for (const auto& row : table.rows) *out << row.dump() << '\n';
    }
    out->flush();
  }

 private:
  CLI::App* sub_;
  Common* common_;
};

struct FormArg {
  QuadForm form;
  double scale;  // original largest eigenvalue
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Inline list, or a file holding a JSON array or whitespace/comma separated values.
FormArg parse_form(const std::string& text, int dim) {
  std::vector<double> values;
  if (text.empty()) {
    values.assign(static_cast<std::size_t>(dim), 1.0);
  } else if (std::filesystem::is_regular_file(text)) {
    std::string body = slurp(text);
    const auto first = body.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && body[first] == '[') {
      values = nlohmann::json::parse(body).get<std::vector<double>>();
    } else {
      std::replace_if(body.begin(), body.end(), [](char c) { return c == ',' || c == '\n' || c == '\r' || c == '\t'; },
                      ' ');
      std::istringstream ss(body);
      for (double v; ss >> v;) values.push_back(v);
      if (!ss.eof()) throw UsageError("unreadable quadratic form file " + text);
    }
  } else {
    values = parse_real_list(text);
  }
  if (dim > 0 && static_cast<int>(values.size()) != dim)
    throw UsageError("--q has " + std::to_string(values.size()) + " values but the distribution has dimension " +
                     std::to_string(dim));
  if (values.empty()) throw UsageError("empty quadratic form");
  const double top = *std::max_element(values.begin(), values.end());
  return {QuadForm::normalized(values), top};
}

Vec parse_vec(const std::string& text, int dim, const std::string& flag) {
  const auto v = parse_real_list(text);
  if (static_cast<int>(v.size()) != dim) throw UsageError(flag + " needs " + std::to_string(dim) + " values");
  return Eigen::Map<const Vec>(v.data(), dim);
}

ordered_json vec_json(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

ordered_json mat_json(const Mat& m) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

ordered_json estimate_row(const TailEstimate& e, double x, std::int64_t n) {
  ordered_json row;
  row["method"] = to_string(e.method);
  row["x"] = num(x);
  row["n"] = n;
  row["value"] = num(e.value);
  row["std_err"] = num(e.std_err);
  row["n_samples"] = e.n_samples;
  row["seed"] = e.exact() ? ordered_json() : ordered_json(e.seed);
  ordered_json diag = ordered_json::object();
  for (const auto& [k, v] : e.diagnostics) diag[k] = num(v);
  row["diagnostics"] = diag;
  return row;
}

bool is_two_point_1d(const DistributionSpec& spec) {
  return spec.dim() == 1 && spec.kind() == DistributionKind::kFiniteSupport && spec.points().size() == 2;
}

std::int64_t checked_n(std::int64_t n) {
  if (n < 1) throw UsageError("n must be >= 1");
  return n;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Rebuilds ratio rows from a ratio-scan CSV file.
std::vector<RatioRow> read_ratio_csv(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<std::string> header;
  std::vector<RatioRow> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split_csv_line(line);
    if (header.empty()) {
      header = cells;
      continue;
    }
    const auto field = [&](const std::string& name) -> const std::string& {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw UsageError("input lacks column " + name);
      const auto idx = static_cast<std::size_t>(it - header.begin());
      if (idx >= cells.size()) throw UsageError("short row in " + path);
      return cells[idx];
    };
    RatioRow r{};
    r.n = std::stoll(field("n"));
    r.x = std::stod(field("x"));
    r.p_hat.value = std::stod(field("p_hat"));
    r.p_hat.std_err = std::stod(field("p_hat_se"));
    r.p_ref = std::stod(field("p_ref"));
    r.ratio_minus_1 = std::stod(field("ratio_minus_1"));
    r.ratio_se = std::stod(field("ratio_se"));
    rows.push_back(r);
  }
  if (rows.empty()) throw UsageError("no data rows in " + path);
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tail probabilities of quadratic forms of normalized sums"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "TOML/INI file with option values");
  app.require_subcommand(1);

  Common common;

  std::map<CLI::App*, std::function<Table(Runner&)>> actions;

  const auto add_output = [&](CLI::App* sub, const std::string& default_format) {
    common.format = default_format;
    sub->add_option("--output,-o", common.output, "Write results to this file instead of stdout");
    sub->add_option("--format", common.format, "Output format")
        ->check(CLI::IsMember({"csv", "jsonl"}))
        ->default_str(default_format);
  };
  const auto add_workers = [&](CLI::App* sub) {
    sub->add_option("--workers", common.workers, "Worker threads (default: QUADTAIL_WORKERS, else 1)")
        ->check(CLI::PositiveNumber);
  };
  const auto add_seed = [&](CLI::App* sub) {
    common.seed_opt = sub->add_option("--seed", common.seed, "Master seed for randomized runs");
  };

  // tail-ref
  std::string q_text, x_text, n_text, spec_name;
  auto* tail_ref = app.add_subcommand("tail-ref", "Gaussian reference tail P(|Q^{1/2} Z| > x)");
  tail_ref->add_option("--q", q_text, "Eigenvalues (list or file)")->required();
  tail_ref->add_option("--x", x_text, "Radius grid: list or lo:hi:count")->required();
  actions[tail_ref] = [&](Runner&) {
    const FormArg f = parse_form(q_text, 0);
    Table t{{"x", "probability", "err_estimate", "lower_bound", "p", "r"}, {}};
    for (double x : parse_real_list(x_text)) {
      if (!(x >= 0.0)) throw UsageError("x must be nonnegative");
      const double xs = x / std::sqrt(f.scale);
      const auto p = gaussian_ball_tail(f.form, xs);
      ordered_json row{{"x", num(x)}, {"probability", num(p.value)}, {"err_estimate", num(p.abs_err)}};
      if (xs > 1.0) {
        const auto b = chisq_lower_bound(f.form, xs);
        row["lower_bound"] = num(b.bound);
        row["p"] = b.p;
        row["r"] = b.r;
      }
      t.rows.push_back(row);
    }
    return t;
  };

  // estimate
  std::string method = "tilted-is";
  std::uint64_t samples = 100000;
  bool sir = false;
  std::uint64_t pool_size = 10000;
  double regime_eps = kDefaultRegimeEpsilon;
  auto* estimate = app.add_subcommand("estimate", "Tail probability of the normalized sum");
  estimate->add_option("--method", method, "Estimator")
      ->check(CLI::IsMember({"crude", "tilted-is", "exact"}))
      ->capture_default_str();
  estimate->add_option("--spec", spec_name, "Preset name or JSON file")->required();
  estimate->add_option("--q", q_text, "Eigenvalues (default identity)");
  estimate->add_option("--x", x_text, "Radius grid")->required();
  estimate->add_option("--n", n_text, "Sample-size grid")->required();
  estimate->add_option("--samples", samples, "Monte Carlo draws")->check(CLI::PositiveNumber)->capture_default_str();
  estimate->add_flag("--sir", sir, "Use the resampling variant of tilted-is");
  estimate->add_option("--pool-size", pool_size, "SIR pool size")->check(CLI::PositiveNumber)->capture_default_str();
  estimate->add_option("--regime-epsilon", regime_eps, "Tilt validity margin")->capture_default_str();
  actions[estimate] = [&](Runner& run) {
    const auto spec = resolve_spec(spec_name);
    const FormArg f = parse_form(q_text, spec.dim());
    const bool randomized = method != "exact";
    const std::uint64_t seed = randomized ? run.require_seed("randomized method") : 0;
    Table t{{"method", "x", "n", "value", "std_err", "n_samples", "seed", "diagnostics"}, {}};
    for (std::int64_t n : parse_int_list(n_text)) {
      checked_n(n);
      for (double x : parse_real_list(x_text)) {
        const double xs = x / std::sqrt(f.scale);
        TailEstimate e;
        if (method == "crude") {
          e = crude_mc(spec, f.form, xs, n, samples, seed, common.workers);
        } else if (method == "tilted-is") {
          e = tilted_is(spec, f.form, xs, n,
                        {.samples = samples, .seed = seed, .workers = common.workers, .sir = sir,
                         .pool_size = pool_size, .regime_epsilon = regime_eps});
        } else {
          e = is_two_point_1d(spec) ? exact_two_point(spec, xs, n) : exact_lattice(spec, f.form, xs, n);
        }
        t.rows.push_back(estimate_row(e, x, n));
      }
    }
    return t;
  };

  // ratio-scan
  std::string scan_method = "auto";
  auto* ratio = app.add_subcommand("ratio-scan", "Relative error P_hat/P_ref - 1 over an (n, x) grid");
  const auto add_scan_opts = [&](CLI::App* sub, bool required) {
    auto* s = sub->add_option("--spec", spec_name, "Preset name or JSON file");
    auto* xo = sub->add_option("--x", x_text, "Radius grid");
    auto* no = sub->add_option("--n", n_text, "Sample-size grid");
    if (required) {
      s->required();
      xo->required();
      no->required();
    }
    sub->add_option("--q", q_text, "Eigenvalues (default identity)");
    sub->add_option("--method", scan_method, "Estimator per row")
        ->check(CLI::IsMember({"auto", "crude", "tilted-is", "exact"}))
        ->capture_default_str();
    sub->add_option("--samples", samples, "Monte Carlo budget per row")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  };
  add_scan_opts(ratio, true);
  const auto run_scan = [&](Runner& run) {
    const auto spec = resolve_spec(spec_name);
    const FormArg f = parse_form(q_text, spec.dim());
    const ScanMethod m = scan_method == "auto"        ? ScanMethod::kAuto
                         : scan_method == "crude"     ? ScanMethod::kCrude
                         : scan_method == "tilted-is" ? ScanMethod::kTiltedIs
                                                      : ScanMethod::kExact;
    const std::uint64_t seed = m == ScanMethod::kExact ? 0 : run.require_seed("randomized scan");
    std::vector<double> xs;
    for (double x : parse_real_list(x_text)) xs.push_back(x / std::sqrt(f.scale));
    auto ns = parse_int_list(n_text);
    for (auto n : ns) checked_n(n);
    auto rows = ratio_scan(spec, f.form, xs, ns, m, samples, seed, common.workers);
    for (auto& r : rows) r.x *= std::sqrt(f.scale);
    return rows;
  };
  actions[ratio] = [&](Runner& run) {
    Table t{{"n", "x", "method", "p_hat", "p_hat_se", "p_ref", "ratio_minus_1", "ratio_se", "row_seed"}, {}};
    for (const auto& r : run_scan(run)) {
      t.rows.push_back({{"n", r.n},
                        {"x", num(r.x)},
                        {"method", to_string(r.p_hat.method)},
                        {"p_hat", num(r.p_hat.value)},
                        {"p_hat_se", num(r.p_hat.std_err)},
                        {"p_ref", num(r.p_ref)},
                        {"ratio_minus_1", num(r.ratio_minus_1)},
                        {"ratio_se", num(r.ratio_se)},
                        {"row_seed", r.p_hat.exact() ? ordered_json() : ordered_json(r.p_hat.seed)}});
    }
    return t;
  };

  // rate-fit
  std::string input;
  bool pair_adjacent = false;
  auto* rate = app.add_subcommand("rate-fit", "Log-log slope of |ratio - 1| against n");
  add_scan_opts(rate, false);
  rate->add_option("--input", input, "ratio-scan CSV to fit instead of running a scan")->check(CLI::ExistingFile);
  rate->add_flag("--pair-adjacent", pair_adjacent, "Average rows n and n+2 before fitting");
  actions[rate] = [&](Runner& run) {
    std::vector<RatioRow> rows;
    if (!input.empty()) {
      rows = read_ratio_csv(input);
    } else {
      if (spec_name.empty() || x_text.empty() || n_text.empty())
        throw UsageError("rate-fit needs --input or --spec, --x and --n");
      rows = run_scan(run);
    }
    std::vector<double> xs;
    for (const auto& r : rows)
      if (std::find(xs.begin(), xs.end(), r.x) == xs.end()) xs.push_back(r.x);
    const auto join = [](const std::vector<std::int64_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
      return s;
    };
    Table t{{"x", "slope", "slope_se", "intercept", "used_n", "excluded_n"}, {}};
    for (double x : xs) {
      const RateFit fit = rate_fit(rows, x, pair_adjacent);
      t.rows.push_back({{"x", num(x)},
                        {"slope", num(fit.slope)},
                        {"slope_se", num(fit.slope_se)},
                        {"intercept", num(fit.intercept)},
                        {"used_n", join(fit.used)},
                        {"excluded_n", join(fit.excluded)}});
    }
    return t;
  };

  // edgeworth
  std::string a_text, center_text;
  bool error_report = false;
  auto* edge = app.add_subcommand("edgeworth", "Two-term Edgeworth ball masses");
  edge->add_option("--spec", spec_name, "Preset name or JSON file")->required();
  edge->add_option("--q", q_text, "Eigenvalues (default identity)");
  edge->add_option("--n", n_text, "Sample size (a grid with --error-report)")->required();
  edge->add_option("--a", a_text, "Ball radius grid")->required();
  edge->add_option("--center", center_text, "Ball center (default origin)");
  edge->add_option("--samples", samples, "Gaussian draws for d >= 3, or exact draws of W for --error-report")
      ->check(CLI::PositiveNumber);
  edge->add_flag("--error-report", error_report, "Compare against exact sampling of W over the a grid");
  actions[edge] = [&](Runner& run) {
    const auto spec = resolve_spec(spec_name);
    const FormArg f = parse_form(q_text, spec.dim());
    const auto a_grid = parse_real_list(a_text);
    const auto ns = parse_int_list(n_text);
    for (auto n : ns) checked_n(n);
    const std::uint64_t draws = edge->get_option("--samples")->count() ? samples : 1000000;
    if (error_report) {
      const std::uint64_t seed = run.require_seed("error report samples W");
      std::vector<double> scaled;
      for (double a : a_grid) scaled.push_back(a / std::sqrt(f.scale));
      Table t{{"n", "sup_error", "a_at_sup", "mc_se_at_sup", "max_mc_se", "envelope_lattice", "envelope_smooth",
               "fitted_constant"},
              {}};
      for (const auto& r : edgeworth_error_report(spec, f.form, ns, scaled, draws, seed, common.workers))
        t.rows.push_back({{"n", r.n},
                          {"sup_error", num(r.sup_error)},
                          {"a_at_sup", num(r.a_at_sup * std::sqrt(f.scale))},
                          {"mc_se_at_sup", num(r.mc_se_at_sup)},
                          {"max_mc_se", num(r.max_mc_se)},
                          {"envelope_lattice", num(r.envelope_lattice)},
                          {"envelope_smooth", num(r.envelope_smooth)},
                          {"fitted_constant", num(r.fitted_constant)}});
      return t;
    }
    if (ns.size() != 1) throw UsageError("--n takes a single value unless --error-report is set");
    const std::uint64_t seed = spec.dim() >= 3 ? run.require_seed("d >= 3 ball masses are sampled") : 0;
    const auto model = EdgeworthModel::from_spec(spec, f.form, ns.front());
    const Vec center = center_text.empty() ? Vec(Vec::Zero(spec.dim())) : parse_vec(center_text, spec.dim(), "--center");
    Table t{{"a", "leading", "correction", "total", "err_estimate"}, {}};
    for (double a : a_grid) {
      if (!(a > 0.0)) throw UsageError("radius must be positive");
      // the ball {|Q^{1/2} W| <= a} is B(0, a) in the coordinates D W
      const auto m = ball_mass(model, center, a / std::sqrt(f.scale),
                               {.samples = draws, .seed = seed, .workers = common.workers});
      t.rows.push_back({{"a", num(a)},
                        {"leading", num(m.leading)},
                        {"correction", num(m.correction)},
                        {"total", num(m.total)},
                        {"err_estimate", num(m.err)}});
    }
    return t;
  };

  // tilt-inspect
  std::string z_text, y_text;
  double x_single = 0.0;
  std::int64_t n_single = 0;
  auto* inspect = app.add_subcommand("tilt-inspect", "Tilt parameters and tilted moments at one z");
  inspect->add_option("--spec", spec_name, "Preset name or JSON file")->required();
  inspect->add_option("--q", q_text, "Eigenvalues (default identity)");
  inspect->add_option("--x", x_single, "Radius")->required();
  inspect->add_option("--n", n_single, "Sample size")->required()->check(CLI::PositiveNumber);
  inspect->add_option("--z", z_text, "Mixing point: a vector, or random:<seed>")->required();
  inspect->add_option("--y", y_text, "Point for the expansion terms (default origin)");
  inspect->add_option("--a", a_text, "Grid for m(a) (default 0:3x:7)");
  inspect->add_option("--regime-epsilon", regime_eps, "Tilt validity margin")->capture_default_str();
  actions[inspect] = [&](Runner&) {
    const auto spec = resolve_spec(spec_name);
    const FormArg f = parse_form(q_text, spec.dim());
    const double xs = x_single / std::sqrt(f.scale);
    const auto params = make_params(xs, n_single, spec.dim());
    check_regime(params, regime_eps);
    Vec z;
    if (z_text.rfind("random:", 0) == 0) {
      const auto seeds = parse_int_list(z_text.substr(7));
      if (seeds.size() != 1 || seeds.front() < 0) throw UsageError("--z random:<seed> needs one nonnegative seed");
      Philox4x32 rng(static_cast<std::uint64_t>(seeds.front()), stream_id(StreamPurpose::kZx, 0));
      z = sample_zx(params, rng);
    } else {
      z = parse_vec(z_text, spec.dim(), "--z");
      if (z.norm() > params.z0) throw UsageError("--z lies outside the truncation ball");
    }
    const Vec y = y_text.empty() ? Vec(Vec::Zero(spec.dim())) : parse_vec(y_text, spec.dim(), "--y");
    const TiltedLaw law(spec, f.form, params, z);
    const auto b = b_terms(spec, f.form, params, z, y);
    Table t{{"x", "n", "h", "z0", "kappa", "z", "mu_tilde", "Sigma_tilde", "lambda_tilde", "log_weight", "y",
             "b_terms", "m"},
            {}};
    ordered_json m_grid = ordered_json::array();
    const auto grid = a_text.empty() ? parse_real_list("0:" + format_double(3 * xs) + ":7") : parse_real_list(a_text);
    for (double a : grid) {
      const double lm = log_m(params, a);
      m_grid.push_back({{"a", num(a)}, {"log_m", num(lm)}, {"m", num(std::exp(lm))}});
    }
    t.rows.push_back({{"x", num(x_single)},
                      {"n", n_single},
                      {"h", num(params.h)},
                      {"z0", num(params.z0)},
                      {"kappa", num(params.kappa)},
                      {"z", vec_json(z)},
                      {"mu_tilde", vec_json(law.mu_tilde())},
                      {"Sigma_tilde", mat_json(law.sigma_tilde())},
                      {"lambda_tilde", vec_json(law.lambda_tilde())},
                      {"log_weight", num(law.log_weight())},
                      {"y", vec_json(y)},
                      {"b_terms", {{"b0", num(b.b0)}, {"b1", num(b.b1)}, {"b2", num(b.b2)}, {"b3", num(b.b3)}}},
                      {"m", m_grid}});
    return t;
  };

  // appendix-limit
  double c_value = 1.5;
  std::uint64_t pairs = 1000000;
  auto* limit_cmd = app.add_subcommand("appendix-limit", "Exact ratio at x = c n^{1/6} against the spherical limit");
  limit_cmd->add_option("--spec", spec_name, "Preset name or JSON file (exact oracle required)")->required();
  limit_cmd->add_option("--c", c_value, "Scale c in x = c n^{1/6}")->capture_default_str();
  limit_cmd->add_option("--n-grid", n_text, "Sample sizes")->required();
  limit_cmd->add_option("--pairs", pairs, "Antithetic sphere pairs for d >= 2")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  actions[limit_cmd] = [&](Runner& run) {
    const auto spec = resolve_spec(spec_name);
    const std::uint64_t seed = spec.dim() >= 2 ? run.require_seed("sphere average is sampled") : 0;
    const auto ns = parse_int_list(n_text);
    for (auto n : ns) checked_n(n);
    Table t{{"n", "x_n", "exact_ratio", "predicted_factor", "predicted_se", "gap"}, {}};
    for (const auto& r :
         nonconvergence_demo(spec, c_value, ns, {.pairs = pairs, .seed = seed, .workers = common.workers}))
      t.rows.push_back({{"n", r.n},
                        {"x_n", num(r.x_n)},
                        {"exact_ratio", num(r.exact_ratio)},
                        {"predicted_factor", num(r.predicted_factor)},
                        {"predicted_se", num(r.predicted_se)},
                        {"gap", num(r.gap)}});
    return t;
  };

  // verify
  bool inject = false;
  bool all_pass = true;
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_flag("--inject-failure", inject, "Force one check to fail (exercises the failure path)");
  actions[verify] = [&](Runner& run) {
    VerifyConfig cfg;
    if (run.has_seed()) {
      cfg.seed = common.seed;
    } else {
      common.seed = cfg.seed;
      common.default_seed = true;
    }
    cfg.workers = common.workers;
    cfg.inject_failure = inject;
    Table t{{"status", "module", "check", "measured", "tolerance", "seed", "detail"}, {}};
    std::size_t passed = 0;
    const auto results = verify_suite(cfg);
    for (const auto& r : results) {
      passed += r.pass;
      t.rows.push_back({{"status", r.pass ? "PASS" : "FAIL"},
                        {"module", r.module},
                        {"check", r.name},
                        {"measured", num(r.measured)},
                        {"tolerance", num(r.tolerance)},
                        {"seed", r.seed},
                        {"detail", r.detail}});
    }
    all_pass = passed == results.size();
    std::cerr << "verify: " << passed << "/" << results.size() << " checks passed\n";
    return t;
  };

  for (auto& [sub, fn] : actions) {
    add_workers(sub);
    if (sub != tail_ref) add_seed(sub);
    add_output(sub, sub == estimate ? "jsonl" : "csv");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  // every subcommand shares one seed slot; point at the parsed one
  common.seed_opt = chosen->get_option_no_throw("--seed");
  if (chosen->get_option("--format")->count() == 0) common.format = chosen == estimate ? "jsonl" : "csv";
  Runner runner(chosen, &common);
  try {
    if (chosen->get_option("--workers")->count() == 0) {
      if (const char* env = std::getenv("QUADTAIL_WORKERS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1 || v > 4096) throw UsageError("QUADTAIL_WORKERS must be a positive integer");
        common.workers = static_cast<int>(v);
      }
    }
    const auto start = std::chrono::steady_clock::now();
    const Table table = actions.at(chosen)(runner);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    runner.emit(table, ms);
    return all_pass ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const RegimeError& e) {
    std::cerr << "regime error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
