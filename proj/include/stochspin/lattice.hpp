// lattice.hpp — coupling matrices, external fields, and the noise-diagonalizing
// transform for the transverse-field Ising model on a D-dimensional periodic
// lattice.

#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace stochspin {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Vector = Eigen::VectorXd;

// ----------------------------- Lattice geometry -----------------------------

struct LatticeSpec {
    std::vector<int> dims;  // N_1 .. N_D, all positive; periodic boundaries

    int n_dims() const { return static_cast<int>(dims.size()); }

    int n_sites() const {
        int n = 1;
        for (int d : dims) n *= d;
        return n;
    }

    void validate() const {
        if (dims.empty()) throw std::invalid_argument("lattice: needs at least one dimension");
        for (int d : dims) {
            if (d < 1) throw std::invalid_argument("lattice: dims must be positive");
        }
    }

    // Flattened index <-> coordinates, dimension 0 fastest.
    int site_index(const std::vector<int>& coord) const {
        int idx = 0;
        for (int d = n_dims() - 1; d >= 0; --d) idx = idx * dims[d] + coord[d];
        return idx;
    }

    std::vector<int> site_coord(int idx) const {
        std::vector<int> c(dims.size());
        for (int d = 0; d < n_dims(); ++d) {
            c[d] = idx % dims[d];
            idx /= dims[d];
        }
        return c;
    }
};

// ------------------------------ Coupling model -------------------------------

// Ising specialization of the quadratic spin Hamiltonian: only the (z,z)
// interaction block is nonzero, fields are h^+ = h^- = Gamma/2, h^z = h.
// Nearest-neighbor entries are 1/2 per dimension so that the double sum over
// (j,k) counts each bond once with unit weight.
struct CouplingModel {
    LatticeSpec lattice;
    double coupling_j = 1.0;   // overall scale J (energy units)
    double gamma = 0.0;        // transverse field
    double field_h = 0.0;      // longitudinal field
    Matrix zz;                 // symmetric N x N interaction matrix (z,z block)
    double epsilon = 0.0;      // diagonal regularization actually applied
    int regularized_dims = 0;  // how many dimensions received the shift

    int n_sites() const { return static_cast<int>(zz.rows()); }
    double h_plus() const { return 0.5 * gamma; }
    double h_minus() const { return 0.5 * gamma; }
    double h_z() const { return field_h; }

    // (O O^T)_jj needed by the strong order-1 corrector: (-2i/J) * zz_jj.
    Complex noise_self_covariance(int site) const {
        if (coupling_j == 0.0) return {0.0, 0.0};
        return Complex(0.0, -2.0 / coupling_j) * zz(site, site);
    }
};

// Builds the periodic nearest-neighbor zz coupling. Any dimension whose site
// count is a multiple of 4 yields zero eigenvalues (cos(2 pi k / N) vanishes),
// so that dimension's block gets a diagonal shift epsilon to keep the matrix
// invertible. The shift adds a constant to the Hamiltonian and leaves the
// dynamics unchanged.
inline CouplingModel build_ising_coupling(const LatticeSpec& lattice, double J, double gamma,
                                          double h, double epsilon = 0.1) {
    lattice.validate();
    const int n = lattice.n_sites();
    const int nd = lattice.n_dims();

    CouplingModel model;
    model.lattice = lattice;
    model.coupling_j = J;
    model.gamma = gamma;
    model.field_h = h;
    model.zz = Matrix::Zero(n, n);

    for (int i = 0; i < n; ++i) {
        std::vector<int> c = lattice.site_coord(i);
        for (int d = 0; d < nd; ++d) {
            const int nd_size = lattice.dims[d];
            std::vector<int> cj = c;
            cj[d] = (c[d] + 1) % nd_size;
            model.zz(i, lattice.site_index(cj)) += 0.5;
            cj[d] = (c[d] - 1 + nd_size) % nd_size;
            model.zz(i, lattice.site_index(cj)) += 0.5;
        }
    }

    for (int d = 0; d < nd; ++d) {
        if (lattice.dims[d] % 4 == 0) {
            model.zz += epsilon * Matrix::Identity(n, n);
            model.epsilon = epsilon;
            ++model.regularized_dims;
        }
    }
    return model;
}

// ------------------------------ Noise transform ------------------------------

// Linear map O from real white noise to the complex HS field, defined by
// (iJ/2) O^T J^-1 O = 1. With zz = V L V^T this is O = V diag(sqrt(-2i l_k/J))
// on the principal branch, so that O O^T = (-2i/J) zz.
struct NoiseTransform {
    CMatrix o;            // N x M, M = number of noise modes (N when J != 0)
    CMatrix o_inv;        // M x N, inverse map (white <- HS field)
    Vector eigenvalues;   // of zz, ascending
    double coupling_j = 0.0;

    int n_sites() const { return static_cast<int>(o.rows()); }
    int n_modes() const { return static_cast<int>(o.cols()); }
    bool has_noise() const { return n_modes() > 0; }
};

inline NoiseTransform noise_transform(const CouplingModel& model) {
    NoiseTransform t;
    t.coupling_j = model.coupling_j;
    const int n = model.n_sites();
    if (model.coupling_j == 0.0) {
        // No interaction: no HS fields at all.
        t.o = CMatrix::Zero(n, 0);
        t.o_inv = CMatrix::Zero(0, n);
        t.eigenvalues = Vector::Zero(0);
        return t;
    }

    Eigen::SelfAdjointEigenSolver<Matrix> solver(model.zz);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("noise_transform: eigendecomposition failed");
    }
    t.eigenvalues = solver.eigenvalues();
    const double lmax = t.eigenvalues.cwiseAbs().maxCoeff();
    const double lmin = t.eigenvalues.cwiseAbs().minCoeff();
    if (lmax == 0.0 || lmin < 1e-12 * lmax) {
        throw std::runtime_error(
            "noise_transform: singular interaction matrix; regularization required");
    }

    t.o = CMatrix::Zero(n, n);
    t.o_inv = CMatrix::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        const Complex scale = std::sqrt(Complex(0.0, -2.0 * t.eigenvalues(k) / model.coupling_j));
        t.o.col(k) = scale * solver.eigenvectors().col(k).cast<Complex>();
        t.o_inv.row(k) = (1.0 / scale) * solver.eigenvectors().col(k).transpose().cast<Complex>();
    }
    return t;
}

// HS field from one real white-noise vector: phi^z = O w.
inline CVector hs_field(const NoiseTransform& transform, const Vector& white_noise) {
    if (white_noise.size() != transform.n_modes()) {
        throw std::invalid_argument("hs_field: noise vector length must match mode count");
    }
    return transform.o * white_noise;
}

}  // namespace stochspin
