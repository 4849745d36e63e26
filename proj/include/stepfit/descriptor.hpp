#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stepfit/dataset.hpp"

namespace stepfit {

enum class Family {
    binary,
    categorical,
    gaussian_unit,
    gaussian_spherical,
    gaussian_diag,
    gaussian_full,
    covariate,
};

std::string family_name(Family family);
Family family_from_name(const std::string& name);
bool family_supports_fiml(Family family);

/// Options for the iterative covariate solver (ignored by closed-form families).
struct SolverOptions {
    enum class Method { newton, gradient };
    Method method = Method::newton;
    int max_iter = 100;
    double step_size = 1e-3;  // gradient method only
    double tol = 1e-8;        // gradient-norm stopping rule
};

/// One conditional-distribution block: a named column range of a dataset
/// handled by a single emission family.
struct BlockSpec {
    std::string name;
    Family family = Family::binary;
    int col_begin = 0;  // half-open range [col_begin, col_end)
    int col_end = 0;
    bool fiml = false;
    SolverOptions solver;
    std::optional<int> n_levels;  // categorical: force a level count (bootstrap safety)

    int width() const { return col_end - col_begin; }
};

struct ModelDescriptor {
    std::vector<BlockSpec> blocks;

    bool empty() const { return blocks.empty(); }
    bool has_covariate() const;
    int covariate_index() const;  // -1 when absent
};

enum class DescriptorRole { measurement, structural };

/// Checks every descriptor invariant against the dataset's shape: the block
/// ranges must partition the columns, covariates may only appear once and
/// only in structural position, FIML must be supported by the family.
void validate_descriptor(const ModelDescriptor& desc, const Dataset& data, DescriptorRole role);

/// Parses either a JSON descriptor ({"blocks":[...]}) or the single-family
/// shorthand ("binary", "gaussian_unit_nan", ...) which spans all n_cols
/// columns. The "_nan" suffix enables FIML for the block.
ModelDescriptor parse_descriptor(const std::string& text, int n_cols);

std::string descriptor_to_json(const ModelDescriptor& desc);

}  // namespace stepfit
