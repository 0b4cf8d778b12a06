// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinyforge/crs.hpp"
#include "tinyforge/dataset.hpp"
#include "tinyforge/ir.hpp"

namespace tinyforge {

struct RunOptions {
    enum class Backend {
        Reference, ///< in-order float reductions, bit-reproducible
        Blas,      ///< float GEMMs through the linked BLAS
    };
    enum class Crs {
        Dense,    ///< weights always used dense
        Feasible, ///< CRS where it would be chosen for the weight stream
        All,      ///< CRS for every weight matrix
    };
    Backend backend = Backend::Reference;
    Crs crs = Crs::Dense;
    /// Reject graphs whose integer section contains float compute, and
    /// treat int32 accumulator overflow as an error.
    bool strict_integer = false;
};

/// Prepared executor for one graph. Holds a reference to `g`, which must
/// outlive it.
class Interpreter {
public:
    explicit Interpreter(const Graph& g, RunOptions opts = {});

    /// Runs a single-input graph and returns its first output.
    Tensor run(const Tensor& input) const;
    /// Every edge value, graph inputs included.
    std::map<std::string, Tensor> trace(const Tensor& input) const;

    const Graph& graph() const { return *g_; }

private:
    struct Prepared {
        std::optional<CrsMatrix<float>> crs_f32;
        std::optional<CrsMatrix<std::uint8_t>> crs_u8;
    };

    void execute(const Tensor& input, std::map<std::string, Tensor>& values, bool keep_all) const;
    Tensor eval_node(std::size_t idx, const std::map<std::string, Tensor>& values) const;

    const Graph* g_;
    RunOptions opts_;
    std::vector<std::size_t> order_;
    std::vector<Prepared> prepared_;
    std::map<std::string, std::size_t> last_use_;
};

Tensor run(const Graph& g, const Tensor& input, RunOptions opts = {});
std::map<std::string, Tensor> trace(const Graph& g, const Tensor& input, RunOptions opts = {});

/// Index of the first maximal element (f32 or u8 tensor).
std::size_t argmax(const Tensor& t);

struct ClassStats {
    std::size_t total = 0;
    std::size_t correct = 0;
};

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<ClassStats> per_class;
    std::vector<std::size_t> predictions;
};

EvalResult evaluate(const Graph& g, const Dataset& data, RunOptions opts = {});

/// Fraction of samples on which the two graphs predict the same class.
double argmax_agreement(const Graph& a, const Graph& b, const Dataset& data);

} // namespace tinyforge
