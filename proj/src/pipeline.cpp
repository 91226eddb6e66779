#include "screenlab/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <json.hpp>

#include "screenlab/bunching.hpp"
#include "screenlab/ident_linear.hpp"
#include "screenlab/ident_nonlinear.hpp"
#include "screenlab/kotlarski.hpp"
#include "screenlab/rationalizability.hpp"
#include "screenlab/solver.hpp"
#include "screenlab/transport.hpp"

namespace screenlab {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string> kKnownStages = {
    "solve",          "simulate",           "identify-linear", "identify-bilinear",
    "identify-nonlinear", "diagnose",       "deconvolve",      "report"};

namespace {

std::string checksum_file(const std::string& path) {
    return format_hex64(fnv1a(read_text_file(path)));
}

struct PipelineContext {
    json cfg;
    std::string out;
    double tol_scale = 1.0;

    std::string path(const std::string& name) const { return out + "/" + name; }

    Primitives primitives() const {
        require(cfg.contains("primitives"), Error::Code::schema_error,
                "config: missing 'primitives'");
        return Primitives::from_json(cfg["primitives"].dump());
    }
    SolverConfig solver_config() const {
        SolverConfig sc;
        if (cfg.contains("solver")) {
            const auto& s = cfg["solver"];
            sc.mesh = s.value("mesh", sc.mesh);
            sc.tol_objective = s.value("tol", sc.tol_objective);
            sc.max_iterations = s.value("max_iterations", sc.max_iterations);
            sc.tol_convexity = s.value("tol_convexity", sc.tol_convexity);
            sc.bunching_rank_tol = s.value("bunching_rank_tol", sc.bunching_rank_tol);
            sc.exclusion_gap_tol = s.value("exclusion_gap_tol", sc.exclusion_gap_tol);
        }
        return sc;
    }
};

void stage_solve(PipelineContext& ctx, StageRecord& rec) {
    Primitives prim = ctx.primitives();
    Menu menu = solve_equilibrium(prim, ctx.solver_config());
    menu.write(ctx.path("menu.txt"));
    rec.artifacts.emplace_back("menu.txt", checksum_file(ctx.path("menu.txt")));
    emit_plot_data(menu, PlotKind::density, ctx.path("plot_regions.txt"));
    rec.artifacts.emplace_back("plot_regions.txt", checksum_file(ctx.path("plot_regions.txt")));

    // second regime when configured (consumed by identify-nonlinear)
    if (ctx.cfg.contains("simulate") && ctx.cfg["simulate"].contains("regimes")) {
        const auto& rg = ctx.cfg["simulate"]["regimes"];
        const double scale = rg.value("scale", 1.5);
        VectorXd shift = VectorXd::Zero(2);
        if (rg.contains("linear_shift")) {
            shift[0] = rg["linear_shift"][0].get<double>();
            shift[1] = rg["linear_shift"][1].get<double>();
        }
        Primitives prim2 = prim.with_cost(prim.cost().with_regime(scale, shift));
        Menu menu2 = solve_equilibrium(prim2, ctx.solver_config());
        menu2.write(ctx.path("menu_z2.txt"));
        rec.artifacts.emplace_back("menu_z2.txt", checksum_file(ctx.path("menu_z2.txt")));
    }
}

void stage_simulate(PipelineContext& ctx, StageRecord& rec) {
    Primitives prim = ctx.primitives();
    Menu menu = Menu::read(ctx.path("menu.txt"));
    const auto& sc = ctx.cfg.contains("simulate") ? ctx.cfg["simulate"] : json::object();
    const int n = sc.value("n", 50000);
    const std::uint64_t seed = sc.value("seed", 7ull);
    CovariateLaw law;
    Dataset ds = sample_market(menu, prim, n, seed, law);
    if (sc.contains("noise")) {
        NoiseSpec ns;
        ns.sigma_eps = sc["noise"].value("sigma_eps", 0.0);
        if (ns.sigma_eps > 0) ds = apply_price_noise(ds, ns, seed ^ 0x5eedull);
    }
    ds.write_csv(ctx.path("dataset.csv"));
    rec.artifacts.emplace_back("dataset.csv", checksum_file(ctx.path("dataset.csv")));
    rec.artifacts.emplace_back("dataset.csv.meta.json",
                               checksum_file(ctx.path("dataset.csv.meta.json")));

    if (fs::exists(ctx.path("menu_z2.txt"))) {
        Menu menu2 = Menu::read(ctx.path("menu_z2.txt"));
        const bool common = sc.value("common_theta", true);
        Dataset two = sample_two_regimes(menu, menu2, prim, n / 2, seed ^ 0x2ull, common, law);
        two.write_csv(ctx.path("dataset_regimes.csv"));
        rec.artifacts.emplace_back("dataset_regimes.csv",
                                   checksum_file(ctx.path("dataset_regimes.csv")));
    }
    // stylized bilinear market for the bunching stage
    ClosedFormSolution cfs(prim.cost().quad_coeff());
    Dataset bl = sample_market_bilinear(cfs, prim, n, seed ^ 0xb111ull, law);
    bl.write_csv(ctx.path("dataset_bilinear.csv"));
    rec.artifacts.emplace_back("dataset_bilinear.csv",
                               checksum_file(ctx.path("dataset_bilinear.csv")));
}

void stage_identify_linear(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    Primitives prim = ctx.primitives();
    Dataset ds = Dataset::read_csv(ctx.path("dataset.csv"));
    PriceField pf = PriceField::fit(ds);
    PseudoTypeField ptf = recover_types_linear(pf, ds, prim.outside().q0);
    estimate_density_high(ptf);

    {
        std::vector<Column> cols;
        std::vector<double> idx(ptf.record_index.begin(), ptf.record_index.end());
        cols.push_back({"record", idx});
        cols.push_back({"theta1", ptf.t1});
        cols.push_back({"theta2", ptf.t2});
        write_columns(ctx.path("pseudotypes.txt"), {"pseudo-types on the screened region"}, cols);
    }
    {
        std::vector<Column> cols;
        std::vector<double> a, b, f;
        for (int iy = 0; iy < ptf.type_grid.ny; ++iy)
            for (int ix = 0; ix < ptf.type_grid.nx; ++ix) {
                a.push_back(ptf.type_grid.x(ix));
                b.push_back(ptf.type_grid.y(iy));
                f.push_back(ptf.density[ptf.type_grid.idx(ix, iy)]);
            }
        write_columns(ctx.path("fhat2.txt"), {"truncated type density estimate"},
                      {{"theta1", a}, {"theta2", b}, {"density", f}});
    }
    CostGrid cg = recover_cost_pde(ptf, pf, ds);
    {
        std::vector<double> a, b, c, w;
        for (int iy = 0; iy < cg.mesh.ny; ++iy)
            for (int ix = 0; ix < cg.mesh.nx; ++ix) {
                if (!cg.inside[cg.mesh.idx(ix, iy)]) continue;
                a.push_back(cg.mesh.x(ix));
                b.push_back(cg.mesh.y(iy));
                c.push_back(cg.values[cg.mesh.idx(ix, iy)]);
                w.push_back(cg.weight[cg.mesh.idx(ix, iy)]);
            }
        write_columns(ctx.path("cost.txt"), {"recovered cost on the screened region"},
                      {{"q1", a}, {"q2", b}, {"cost", c}, {"weight", w}});
    }
    PolyCost ext = PolyCost::fit(cg);
    man.verdicts.push_back("identify-linear: records=" + std::to_string(ptf.t1.size()) +
                           " bandwidth=" + format_full(pf.bandwidth()) +
                           " extension_rel_err=" + format_full(ext.in_sample_rel_error()));
    for (const char* f : {"pseudotypes.txt", "fhat2.txt", "cost.txt"})
        rec.artifacts.emplace_back(f, checksum_file(ctx.path(f)));
}

void stage_identify_bilinear(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    Primitives prim = ctx.primitives();
    Dataset ds = Dataset::read_csv(ctx.path("dataset_bilinear.csv"));
    BunchingGeometry geom = detect_bunching_set(ds, prim.outside().q0);
    require(geom.found, Error::Code::precondition_failed,
            "identify-bilinear: no bunching flat in the data");
    BunchingIndex bix = bunching_index(ds, geom);
    RadonConfig rc;
    rc.max_gap_radians = 1.2;  // economic covariates cover a direction cap only
    RadonEstimate re = radon_invert(bix.B, bix.D1, bix.D2, rc);
    {
        std::vector<double> a, b, f;
        for (int iy = 0; iy < re.grid.ny; ++iy)
            for (int ix = 0; ix < re.grid.nx; ++ix) {
                a.push_back(re.grid.x(ix));
                b.push_back(re.grid.y(iy));
                f.push_back(re.density[re.grid.idx(ix, iy)]);
            }
        write_columns(ctx.path("f1hat.txt"), {"bunched-type density (Radon inversion)"},
                      {{"theta1", a}, {"theta2", b}, {"density", f}});
    }
    man.verdicts.push_back("identify-bilinear: flat R2=" + format_full(geom.r_squared) +
                           " rank_corr=" + format_full(bix.rank_correlation) +
                           " clipped_mass=" + format_full(re.clipped_mass));
    rec.artifacts.emplace_back("f1hat.txt", checksum_file(ctx.path("f1hat.txt")));
}

void stage_identify_nonlinear(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    Primitives prim = ctx.primitives();
    Dataset ds = Dataset::read_csv(ctx.path("dataset_regimes.csv"));
    RegimePair rp = build_regime_pair(ds, prim.outside().q0);
    find_fixed_point(rp);
    TypeField tf = recover_type_field(rp);
    MarginalUtility mu = recover_marginal_utility(tf, rp.pf1);
    CostGrid c1 = recover_cost_nonlinear(rp, 1, mu);
    CostGrid c2 = recover_cost_nonlinear(rp, 2, mu);
    {
        std::vector<double> a, b, t1, t2;
        for (int iy = 0; iy < tf.grid.ny; ++iy)
            for (int ix = 0; ix < tf.grid.nx; ++ix) {
                if (!tf.ok[tf.grid.idx(ix, iy)]) continue;
                a.push_back(tf.grid.x(ix));
                b.push_back(tf.grid.y(iy));
                t1.push_back(tf.t1[tf.grid.idx(ix, iy)]);
                t2.push_back(tf.t2[tf.grid.idx(ix, iy)]);
            }
        write_columns(ctx.path("thetafield.txt"), {"recovered types on the screened region"},
                      {{"q1", a}, {"q2", b}, {"theta1", t1}, {"theta2", t2}});
    }
    {
        write_columns(ctx.path("dv.txt"), {"recovered marginal utility, separable projections"},
                      {{"axis1", mu.axis1}, {"dv1", mu.dv1}});
        std::vector<Column> cols2 = {{"axis2", mu.axis2}, {"dv2", mu.dv2}};
        write_columns(ctx.path("dv2.txt"), {"recovered marginal utility, second axis"}, cols2);
    }
    for (auto [cg, name] : {std::make_pair(&c1, "cost_z1.txt"), std::make_pair(&c2, "cost_z2.txt")}) {
        std::vector<double> a, b, c;
        for (int iy = 0; iy < cg->mesh.ny; ++iy)
            for (int ix = 0; ix < cg->mesh.nx; ++ix) {
                if (!cg->inside[cg->mesh.idx(ix, iy)]) continue;
                a.push_back(cg->mesh.x(ix));
                b.push_back(cg->mesh.y(iy));
                c.push_back(cg->values[cg->mesh.idx(ix, iy)]);
            }
        write_columns(ctx.path(name), {"recovered regime cost"}, {{"q1", a}, {"q2", b}, {"cost", c}});
        rec.artifacts.emplace_back(name, checksum_file(ctx.path(name)));
    }
    // one representative iteration trajectory
    {
        Vector2d start(rp.q_hat[0] * 0.7, rp.q_hat[1] * 0.7);
        if (rp.in_common(start[0], start[1])) {
            IterationResult ir = iterate_type_recovery(rp, start);
            std::vector<std::pair<double, double>> traj;
            for (const auto& p : ir.trajectory) traj.emplace_back(p[0], p[1]);
            emit_plot_data(traj, PlotKind::trajectory, ctx.path("trajectory.txt"));
            rec.artifacts.emplace_back("trajectory.txt", checksum_file(ctx.path("trajectory.txt")));
        }
    }
    man.verdicts.push_back("identify-nonlinear: q_hat=(" + format_full(rp.q_hat[0]) + "," +
                           format_full(rp.q_hat[1]) + ") gap=" + format_full(rp.gap) +
                           " sign_condition=" + (rp.sign_condition ? "true" : "false") +
                           " field_failures=" + std::to_string(tf.failures));
    for (const char* f : {"thetafield.txt", "dv.txt", "dv2.txt"})
        rec.artifacts.emplace_back(f, checksum_file(ctx.path(f)));
}

void stage_diagnose(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    Primitives prim = ctx.primitives();
    Dataset ds = Dataset::read_csv(ctx.path("dataset.csv"));
    RatConfig rcfg;
    rcfg.c1_tol *= ctx.tol_scale;
    RationalizabilityReport rep = rationalizability_check(ds, ModelClass::M1, prim.outside().q0,
                                                          rcfg);
    rep.write(ctx.path("verdicts.txt"));
    rec.artifacts.emplace_back("verdicts.txt", checksum_file(ctx.path("verdicts.txt")));
    std::string line = "diagnose:";
    for (const auto& c : rep.conditions)
        line += " " + c.name + (c.pass ? "=pass" : "=fail");
    man.verdicts.push_back(line);

    Lemma2Report l2 = lemma2_witness((VectorXd(2) << 0.5, 0.7).finished());
    man.verdicts.push_back("lemma2: sup_diff=" + format_full(l2.sup_diff) +
                           " mismatched=" + format_full(l2.sup_diff_mismatched));
}

void stage_deconvolve(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    Primitives prim = ctx.primitives();
    const auto& sc = ctx.cfg.contains("simulate") ? ctx.cfg["simulate"] : json::object();
    NoiseSpec ns;
    ns.taste = NoiseSpec::TasteLaw::lognormal;
    ns.sigma_y = sc.contains("noise") ? sc["noise"].value("sigma_y", 0.2) : 0.2;
    const std::uint64_t seed = sc.value("seed", 7ull) ^ 0xdecull;
    Dataset pt = sample_taste_shifted_pseudotypes(prim, ns, 400, 125, seed);
    DeconvResult dr = kotlarski_deconv(pt, seed ^ 0x51ull);
    {
        write_columns(ctx.path("deconv_y.txt"), {"recovered taste-shifter law"},
                      {{"y", dr.y_grid}, {"density", dr.y_density}, {"cdf", dr.y_cdf}});
        write_columns(ctx.path("deconv_theta.txt"), {"recovered base-type law"},
                      {{"theta", dr.theta_grid}, {"density", dr.theta_density},
                       {"cdf", dr.theta_cdf}});
    }
    man.verdicts.push_back("deconvolve: pairs=" + std::to_string(dr.pairs) +
                           " cutoff=" + format_full(dr.cutoff));
    for (const char* f : {"deconv_y.txt", "deconv_theta.txt"})
        rec.artifacts.emplace_back(f, checksum_file(ctx.path(f)));
}

void stage_report(PipelineContext& ctx, StageRecord& rec, RunManifest& man) {
    std::string txt = "# run report\n";
    for (const auto& v : man.verdicts) txt += v + "\n";
    write_text_file(ctx.path("report.txt"), txt);
    rec.artifacts.emplace_back("report.txt", checksum_file(ctx.path("report.txt")));
}

}  // namespace

std::string RunManifest::to_json() const {
    json j;
    j["config_hash"] = config_hash;
    j["verdicts"] = verdicts;
    j["stages"] = json::array();
    for (const auto& s : stages) {
        json js;
        js["name"] = s.name;
        js["ran"] = s.ran;
        js["ok"] = s.ok;
        js["skipped"] = s.skipped;
        js["millis"] = s.millis;
        if (!s.error.empty()) js["error"] = s.error;
        js["artifacts"] = json::array();
        for (const auto& [p, c] : s.artifacts) js["artifacts"].push_back({{"path", p}, {"checksum", c}});
        j["stages"].push_back(js);
    }
    return j.dump(2);
}

void RunManifest::write(const std::string& path) const { write_text_file(path, to_json() + "\n"); }

PlotKind plot_kind_from(const std::string& name) {
    if (name == "scatter") return PlotKind::scatter;
    if (name == "surface") return PlotKind::surface;
    if (name == "density") return PlotKind::density;
    if (name == "trajectory") return PlotKind::trajectory;
    throw Error(Error::Code::invalid_argument, "unknown plot kind: " + name);
}

void emit_plot_data(const Menu& menu, PlotKind kind, const std::string& path) {
    require(kind == PlotKind::surface || kind == PlotKind::density,
            Error::Code::invalid_argument, "menu artifacts support surface and density plots");
    std::vector<double> a, b, v;
    for (int iy = 0; iy < menu.lat.ny; ++iy)
        for (int ix = 0; ix < menu.lat.nx; ++ix) {
            a.push_back(menu.lat.x(ix));
            b.push_back(menu.lat.y(iy));
            v.push_back(kind == PlotKind::surface ? menu.U[menu.lat.idx(ix, iy)]
                                                  : menu.label[menu.lat.idx(ix, iy)]);
        }
    write_columns(path,
                  {kind == PlotKind::surface ? "indirect utility surface; axes theta1, theta2"
                                             : "region labels (0 excluded, 1 bunched, 2 screened); axes theta1, theta2"},
                  {{"theta1", a}, {"theta2", b}, {kind == PlotKind::surface ? "U" : "label", v}});
}

void emit_plot_data(const Dataset& ds, PlotKind kind, const std::string& path) {
    require(kind == PlotKind::scatter, Error::Code::invalid_argument,
            "dataset artifacts support scatter plots");
    std::vector<double> a, b, p;
    for (int i = 0; i < ds.size(); ++i) {
        a.push_back(ds.q(i, 0));
        b.push_back(ds.q(i, 1));
        p.push_back(ds.price(i));
    }
    write_columns(path, {"choice/price scatter; axes q1, q2, price"},
                  {{"q1", a}, {"q2", b}, {"p", p}});
}

void emit_plot_data(const std::vector<std::pair<double, double>>& trajectory, PlotKind kind,
                    const std::string& path) {
    require(kind == PlotKind::trajectory, Error::Code::invalid_argument,
            "trajectories support trajectory plots");
    std::vector<double> l, a, b;
    for (size_t k = 0; k < trajectory.size(); ++k) {
        l.push_back(static_cast<double>(k));
        a.push_back(trajectory[k].first);
        b.push_back(trajectory[k].second);
    }
    write_columns(path, {"iteration trajectory; ordered steps"},
                  {{"L", l}, {"q1", a}, {"q2", b}});
}

RunManifest run_stages(const std::string& config_json, const std::string& out_dir,
                       const std::vector<std::string>& stages) {
    PipelineContext ctx;
    try {
        ctx.cfg = json::parse(config_json);
    } catch (const std::exception& e) {
        throw Error(Error::Code::schema_error, std::string("config parse: ") + e.what());
    }
    ctx.out = out_dir;
    ctx.tol_scale = ctx.cfg.value("tolerance_scale", 1.0);
    require(ctx.tol_scale > 0, Error::Code::schema_error,
            "config: tolerance_scale must be positive");

    // schema: validate the stage list (field path reported)
    for (size_t i = 0; i < stages.size(); ++i) {
        bool known = false;
        for (const auto& k : kKnownStages) known = known || k == stages[i];
        require(known, Error::Code::schema_error,
                "config: stages[" + std::to_string(i) + "] unknown stage '" + stages[i] + "'");
    }
    // config sanity performed up front so schema errors precede any execution
    if (ctx.cfg.contains("primitives")) (void)ctx.primitives();

    fs::create_directories(out_dir);
    RunManifest man;
    man.config_hash = format_hex64(fnv1a(ctx.cfg.dump()));

    bool failed_upstream = false;
    for (const auto& name : kKnownStages) {
        bool requested = false;
        for (const auto& s : stages) requested = requested || s == name;
        if (!requested) continue;
        StageRecord rec;
        rec.name = name;
        if (failed_upstream) {
            rec.skipped = true;
            man.stages.push_back(rec);
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
            rec.ran = true;
            if (name == "solve") stage_solve(ctx, rec);
            else if (name == "simulate") stage_simulate(ctx, rec);
            else if (name == "identify-linear") stage_identify_linear(ctx, rec, man);
            else if (name == "identify-bilinear") stage_identify_bilinear(ctx, rec, man);
            else if (name == "identify-nonlinear") stage_identify_nonlinear(ctx, rec, man);
            else if (name == "diagnose") stage_diagnose(ctx, rec, man);
            else if (name == "deconvolve") stage_deconvolve(ctx, rec, man);
            else if (name == "report") stage_report(ctx, rec, man);
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
            failed_upstream = true;
        }
        rec.millis = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
        man.stages.push_back(rec);
    }
    man.write(out_dir + "/manifest.json");
    return man;
}

RunManifest run_pipeline(const std::string& config_json, const std::string& out_dir) {
    json cfg;
    try {
        cfg = json::parse(config_json);
    } catch (const std::exception& e) {
        throw Error(Error::Code::schema_error, std::string("config parse: ") + e.what());
    }
    std::vector<std::string> stages;
    if (cfg.contains("stages")) {
        require(cfg["stages"].is_array(), Error::Code::schema_error,
                "config: 'stages' must be an array");
        for (const auto& s : cfg["stages"]) stages.push_back(s.get<std::string>());
    } else {
        stages = {"solve", "simulate", "identify-linear", "diagnose", "report"};
    }
    return run_stages(config_json, out_dir, stages);
}

}  // namespace screenlab
