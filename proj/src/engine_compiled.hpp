#pragma once

// Rule compilation shared by the engine's matchers: variables are interned to
// slot indices so that bindings are flat vectors.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "microcep/event.hpp"
#include "microcep/rule.hpp"

namespace microcep::detail {

using Binding = std::vector<std::optional<Value>>;

class VarTable {
public:
    int index(const std::string& name) {
        auto [it, inserted] = indices_.try_emplace(name, static_cast<int>(indices_.size()));
        return it->second;
    }
    std::size_t size() const { return indices_.size(); }

private:
    std::map<std::string, int> indices_;
};

struct CompiledTerm {
    enum class Kind { Wildcard, Var, Const };
    Kind kind = Kind::Wildcard;
    int var = -1;
    Value constant;
};

struct CompiledPattern {
    std::string name;
    CompiledTerm start;
    CompiledTerm end;
    std::vector<CompiledTerm> args;

    // Unifies the event with the pattern, writing into `binding` (sized to the
    // rule's variable count). Returns false on name/arity/constant mismatch or
    // inconsistent repeated variables.
    bool match(const Event& e, Binding& binding) const;
};

CompiledPattern compile_pattern(const EventPattern& p, VarTable& vars);

// Where-clause evaluation over a flat binding.
class CompiledConstraints {
public:
    CompiledConstraints() = default;
    CompiledConstraints(const std::vector<Constraint>& constraints, VarTable& vars);

    bool hold(const Binding& binding) const;
    bool empty() const { return roots_.empty(); }

private:
    struct Node {
        enum class Kind { Var, Num, Abs, Bin } kind;
        int var = -1;
        double num = 0;
        ArithOp op = ArithOp::Add;
        int left = -1;
        int right = -1;
    };
    struct Root {
        int lhs;
        CmpOp op;
        int rhs;
    };

    int add(const ArithExpr& e, VarTable& vars);
    std::optional<Value> eval(int node, const Binding& binding) const;

    std::vector<Node> nodes_;
    std::vector<Root> roots_;
};

// Merges `src` into `dst`; false if a shared variable disagrees.
bool join_into(Binding& dst, const Binding& src);
bool joinable(const Binding& a, const Binding& b);

Event build_head(const CompiledPattern& head, const Binding& binding, TimeMs start, TimeMs end);

}  // namespace microcep::detail
