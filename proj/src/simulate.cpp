#include "screenlab/simulate.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace screenlab {

void Dataset::reserve(int n) {
    q_.reserve(static_cast<size_t>(n) * J_);
    x1_.reserve(static_cast<size_t>(n) * J_);
    x2_.reserve(static_cast<size_t>(n) * K_);
    p_.reserve(n);
    z_.reserve(n);
}

void Dataset::append(const VectorXd& q, double p, const VectorXd& x1, const VectorXd& x2, int z) {
    require(q.size() == J_ && x1.size() == J_ && x2.size() == K_, Error::Code::dimension_mismatch,
            "dataset append: dimension mismatch");
    for (int j = 0; j < J_; ++j) q_.push_back(q[j]);
    p_.push_back(p);
    for (int j = 0; j < J_; ++j) x1_.push_back(x1[j]);
    for (int k = 0; k < K_; ++k) x2_.push_back(x2[k]);
    z_.push_back(z);
}

VectorXd Dataset::qvec(int i) const {
    VectorXd v(J_);
    for (int j = 0; j < J_; ++j) v[j] = q(i, j);
    return v;
}

VectorXd Dataset::x1vec(int i) const {
    VectorXd v(J_);
    for (int j = 0; j < J_; ++j) v[j] = x1(i, j);
    return v;
}

Dataset Dataset::filter_z(int zval) const {
    Dataset out(J_, K_);
    out.seed = seed;
    out.menu_id = menu_id;
    out.noise_desc = noise_desc;
    VectorXd q(J_), x1(J_), x2(K_);
    for (int i = 0; i < size(); ++i) {
        if (z_[i] != zval) continue;
        for (int j = 0; j < J_; ++j) q[j] = this->q(i, j);
        for (int j = 0; j < J_; ++j) x1[j] = this->x1(i, j);
        for (int k = 0; k < K_; ++k) x2[k] = this->x2(i, k);
        out.append(q, p_[i], x1, x2, z_[i]);
    }
    return out;
}

void Dataset::write_csv(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), Error::Code::io_error, "cannot open for write: " + path);
    for (int j = 0; j < J_; ++j) out << "q_" << j + 1 << ",";
    out << "p,";
    for (int j = 0; j < J_; ++j) out << "x1_" << j + 1 << ",";
    for (int k = 0; k < K_; ++k) out << "x2_" << k + 1 << ",";
    out << "z\n";
    for (int i = 0; i < size(); ++i) {
        for (int j = 0; j < J_; ++j) out << format_full(q(i, j)) << ",";
        out << format_full(p_[i]) << ",";
        for (int j = 0; j < J_; ++j) out << format_full(x1(i, j)) << ",";
        for (int k = 0; k < K_; ++k) out << format_full(x2(i, k)) << ",";
        out << z_[i] << "\n";
    }
    require(out.good(), Error::Code::io_error, "write failed: " + path);

    nlohmann::json meta;
    meta["seed"] = seed;
    meta["menu_id"] = menu_id;
    meta["noise"] = noise_desc;
    meta["n"] = size();
    meta["qdim"] = J_;
    meta["x2dim"] = K_;
    write_text_file(path + ".meta.json", meta.dump(2) + "\n");
}

Dataset Dataset::read_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Error::Code::io_error, "cannot open for read: " + path);
    std::string header;
    require(static_cast<bool>(std::getline(in, header)) && !header.empty(), Error::Code::io_error,
            "empty dataset file: " + path);

    std::vector<std::string> names;
    {
        std::istringstream hs(header);
        std::string tok;
        while (std::getline(hs, tok, ',')) names.push_back(tok);
    }
    int J = 0, K = 0;
    for (const auto& nm : names) {
        if (nm.rfind("q_", 0) == 0) ++J;
        if (nm.rfind("x2_", 0) == 0) ++K;
    }
    require(J >= 1, Error::Code::schema_error, "dataset header: no q_ columns in " + path);
    // exact header layout check, naming the first offender
    std::vector<std::string> expect;
    for (int j = 0; j < J; ++j) expect.push_back("q_" + std::to_string(j + 1));
    expect.push_back("p");
    for (int j = 0; j < J; ++j) expect.push_back("x1_" + std::to_string(j + 1));
    for (int k = 0; k < K; ++k) expect.push_back("x2_" + std::to_string(k + 1));
    expect.push_back("z");
    for (size_t c = 0; c < expect.size(); ++c)
        require(c < names.size() && names[c] == expect[c], Error::Code::schema_error,
                "dataset header: missing or misplaced column '" + expect[c] + "' in " + path);
    require(names.size() == expect.size(), Error::Code::schema_error,
            "dataset header: unknown trailing column '" + names[expect.size()] + "' in " + path);

    Dataset ds(J, std::max(K, 0));
    std::string line;
    int row = 1;
    VectorXd q(J), x1(J), x2(std::max(K, 1));
    x2.setZero();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        std::istringstream ls(line);
        std::string cell;
        auto next = [&](int col) -> double {
            require(static_cast<bool>(std::getline(ls, cell, ',')), Error::Code::io_error,
                    "dataset row " + std::to_string(row) + ": too few cells");
            try {
                size_t used = 0;
                double v = std::stod(cell, &used);
                require(used == cell.size(), Error::Code::io_error, "bad cell");
                return v;
            } catch (...) {
                throw Error(Error::Code::io_error, "dataset row " + std::to_string(row) +
                                                       ", column " + expect[col] +
                                                       ": non-numeric cell '" + cell + "'");
            }
        };
        int col = 0;
        for (int j = 0; j < J; ++j) q[j] = next(col++);
        double p = next(col++);
        for (int j = 0; j < J; ++j) x1[j] = next(col++);
        for (int k = 0; k < K; ++k) x2[k] = next(col++);
        double zv = next(col++);
        ds.append(q, p, x1, K ? x2 : VectorXd::Zero(ds.x2dim()), static_cast<int>(zv));
    }
    require(ds.size() > 0, Error::Code::io_error, "empty dataset (no records): " + path);
    return ds;
}

void CovariateLaw::draw(Rng& rng, VectorXd& x1, VectorXd& x2) const {
    const double phi = rng.uniform(angle_lo, angle_hi);
    const double r = rng.uniform(radius_lo, radius_hi);
    x1.resize(2);
    x1[0] = r * std::cos(phi);
    x1[1] = r * std::sin(phi);
    x2.resize(x2_dim);
    for (int k = 0; k < x2_dim; ++k) x2[k] = rng.uniform();
}

namespace {

// interpolated menu response for one type draw
void menu_response(const Menu& menu, const Primitives& prim, const VectorXd& theta, VectorXd& q,
                   double& p, bool& excluded) {
    const Lattice2D& lat = menu.lat;
    const double t1 = std::clamp(theta[0], lat.x0, lat.x1);
    const double t2 = std::clamp(theta[1], lat.y0, lat.y1);
    // exclusion by nearest-node label; allocation by bilinear interpolation
    const int ix = std::clamp(static_cast<int>(std::lround((t1 - lat.x0) / lat.hx())), 0, lat.nx - 1);
    const int iy = std::clamp(static_cast<int>(std::lround((t2 - lat.y0) / lat.hy())), 0, lat.ny - 1);
    excluded = menu.label[lat.idx(ix, iy)] == 0;
    if (excluded) {
        q = prim.outside().q0;
        p = prim.outside().P0;
        return;
    }
    q.resize(2);
    q[0] = std::max(0.0, lat.interp(menu.rho1, t1, t2));
    q[1] = std::max(0.0, lat.interp(menu.rho2, t1, t2));
    const double U = lat.interp(menu.U, t1, t2);
    // envelope price: theta . v(q) - U
    p = theta[0] * prim.utility().v(0, q[0]) + theta[1] * prim.utility().v(1, q[1]) - U;
}

}  // namespace

Dataset sample_market(const Menu& menu, const Primitives& prim, int n, std::uint64_t seed,
                      const CovariateLaw& law) {
    require(n > 0, Error::Code::invalid_argument, "sample_market: n must be positive");
    require(prim.dimension() == 2, Error::Code::dimension_mismatch, "sample_market: J=2 menus");
    Dataset ds(2, law.x2_dim);
    ds.reserve(n);
    ds.seed = seed;
    ds.menu_id = "menu";
    VectorXd theta(2), q(2), x1, x2;
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        prim.density().sample(rng, theta[0], theta[1]);
        law.draw(rng, x1, x2);
        double p;
        bool excluded;
        menu_response(menu, prim, theta, q, p, excluded);
        ds.append(q, p, x1, x2, 1);
    }
    return ds;
}

Dataset sample_two_regimes(const Menu& menu1, const Menu& menu2, const Primitives& prim, int n,
                           std::uint64_t seed, bool common_theta, const CovariateLaw& law) {
    require(n > 0, Error::Code::invalid_argument, "sample_two_regimes: n must be positive");
    Dataset ds(2, law.x2_dim);
    ds.reserve(2 * n);
    ds.seed = seed;
    ds.menu_id = "two-regime";
    VectorXd theta(2), theta2(2), q(2), x1, x2;
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        prim.density().sample(rng, theta[0], theta[1]);
        law.draw(rng, x1, x2);
        if (common_theta) {
            theta2 = theta;
        } else {
            prim.density().sample(rng, theta2[0], theta2[1]);
        }
        double p;
        bool excluded;
        menu_response(menu1, prim, theta, q, p, excluded);
        ds.append(q, p, x1, x2, 1);
        menu_response(menu2, prim, theta2, q, p, excluded);
        ds.append(q, p, x1, x2, 2);
    }
    return ds;
}

Dataset sample_market_bilinear(const ClosedFormSolution& cfs, const Primitives& prim, int n,
                               std::uint64_t seed, const CovariateLaw& law) {
    require(n > 0, Error::Code::invalid_argument, "sample_market_bilinear: n must be positive");
    const double c = cfs.c();
    Dataset ds(2, law.x2_dim);
    ds.reserve(n);
    ds.seed = seed;
    ds.menu_id = "bilinear-closed-form";
    VectorXd theta(2), q(2), x1, x2;
    for (int i = 0; i < n; ++i) {
        Rng rng(seed, static_cast<std::uint64_t>(i));
        prim.density().sample(rng, theta[0], theta[1]);
        law.draw(rng, x1, x2);
        const double W = theta[0] * x1[0] + theta[1] * x1[1];
        double p;
        if (W < cfs.tau0()) {
            q = prim.outside().q0;
            p = prim.outside().P0;
            ds.append(q, p, x1, x2, 1);
            continue;
        }
        if (W <= cfs.tau1()) {
            const double r = cfs.rho_b(W);
            q[0] = r;
            q[1] = r;
            p = W * r - cfs.bunch_utility(W);  // envelope price along the bunch family
        } else {
            // screened: effective type eta = theta o x1 gets its first-best
            // bundle q = eta/c off the flat; U = |eta|^2/(2c) + K with the
            // constant matched to the bunch utility at the band top's midpoint
            const double e1 = theta[0] * x1[0], e2 = theta[1] * x1[1];
            q[0] = e1 / c;
            q[1] = e2 / c;
            const double t1sq = cfs.tau1() * cfs.tau1();
            const double K = cfs.bunch_utility(cfs.tau1()) - t1sq / (4.0 * c);
            const double U = (e1 * e1 + e2 * e2) / (2.0 * c) + K;
            p = e1 * q[0] + e2 * q[1] - U;
        }
        ds.append(q, p, x1, x2, 1);
    }
    return ds;
}

Dataset apply_price_noise(const Dataset& ds, const NoiseSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset out = ds;
    if (spec.sigma_eps == 0.0) return out;
    auto& p = out.raw_prices();
    for (size_t i = 0; i < p.size(); ++i) {
        Rng rng(seed ^ 0x707a5ed5eaf1ull, i);
        p[i] += spec.sigma_eps * rng.normal();
    }
    out.noise_desc = "price sigma=" + format_full(spec.sigma_eps);
    return out;
}

double draw_taste_shifter(const NoiseSpec& spec, std::uint64_t seed, std::uint64_t market_index) {
    spec.validate();
    if (spec.taste == NoiseSpec::TasteLaw::degenerate) return 1.0;
    Rng rng(seed ^ 0x7a57e511f7e2ull, market_index);
    return rng.lognormal(0.0, spec.sigma_y);
}

Dataset sample_taste_shifted_pseudotypes(const Primitives& prim, const NoiseSpec& spec,
                                         int markets, int per_market, std::uint64_t seed) {
    spec.validate();
    require(markets > 0 && per_market > 0, Error::Code::invalid_argument,
            "taste-shifted sampling: counts must be positive");
    Dataset ds(2, 1);
    ds.reserve(markets * per_market);
    ds.seed = seed;
    ds.menu_id = "taste-shifted-pseudotypes";
    VectorXd q(2), x1(2), x2(1);
    x1.setZero();
    for (int m = 0; m < markets; ++m) {
        const double Y = draw_taste_shifter(spec, seed, static_cast<std::uint64_t>(m));
        for (int i = 0; i < per_market; ++i) {
            Rng rng(seed, (static_cast<std::uint64_t>(m) << 24) ^ static_cast<std::uint64_t>(i));
            double t1, t2;
            prim.density().sample(rng, t1, t2);
            // keep logs well defined
            t1 = std::max(t1, 0.02);
            t2 = std::max(t2, 0.02);
            q[0] = Y * t1;
            q[1] = Y * t2;
            x2[0] = m;
            ds.append(q, 0.0, x1, x2, 1);
        }
    }
    return ds;
}

}  // namespace screenlab
