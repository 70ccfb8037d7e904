#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace elastireg {

// Reverse-mode autodiff on a flat tape of scalar operations. Values are
// computed eagerly as nodes are recorded; backward() runs one adjoint sweep.
// clear() keeps the node capacity so a training loop can re-record every
// step without reallocating.
class Tape {
  public:
    using Id = std::int32_t;

    enum class Op : std::uint8_t { Const, Var, Add, Sub, Mul, Div, Neg, Tanh, Fma };

    Id constant(double value) { return push(Op::Const, -1, -1, -1, value); }

    // Differentiated input; inputs are numbered in creation order.
    Id var(double value) {
        const Id id = push(Op::Var, -1, -1, -1, value);
        var_ids_.push_back(id);
        return id;
    }

    Id add(Id a, Id b) { return push(Op::Add, a, b, -1, val_[a] + val_[b]); }
    Id sub(Id a, Id b) { return push(Op::Sub, a, b, -1, val_[a] - val_[b]); }
    Id mul(Id a, Id b) { return push(Op::Mul, a, b, -1, val_[a] * val_[b]); }
    Id div(Id a, Id b) { return push(Op::Div, a, b, -1, val_[a] / val_[b]); }
    Id neg(Id a) { return push(Op::Neg, a, -1, -1, -val_[a]); }
    Id tanh(Id a) { return push(Op::Tanh, a, -1, -1, std::tanh(val_[a])); }
    // a*b + c in one node; the workhorse of the MLP layers.
    Id fma(Id a, Id b, Id c) { return push(Op::Fma, a, b, c, val_[a] * val_[b] + val_[c]); }

    double value(Id id) const { return val_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return op_.size(); }
    std::size_t var_count() const { return var_ids_.size(); }

    void clear() {
        op_.clear();
        a_.clear();
        b_.clear();
        c_.clear();
        val_.clear();
        adj_.clear();
        var_ids_.clear();
        seeded_ = false;
    }

    // Recomputes every node value from the leaves; returns the value of
    // `output`. Used to assert that a recorded tape reproduces the forward
    // pass bit-exactly.
    double replay(Id output) {
        check_id(output, "replay");
        for (std::size_t i = 0; i < op_.size(); ++i) {
            switch (op_[i]) {
                case Op::Const:
                case Op::Var: break;
                case Op::Add: val_[i] = val_[a_[i]] + val_[b_[i]]; break;
                case Op::Sub: val_[i] = val_[a_[i]] - val_[b_[i]]; break;
                case Op::Mul: val_[i] = val_[a_[i]] * val_[b_[i]]; break;
                case Op::Div: val_[i] = val_[a_[i]] / val_[b_[i]]; break;
                case Op::Neg: val_[i] = -val_[a_[i]]; break;
                case Op::Tanh: val_[i] = std::tanh(val_[a_[i]]); break;
                case Op::Fma: val_[i] = val_[a_[i]] * val_[b_[i]] + val_[c_[i]]; break;
            }
        }
        return val_[static_cast<std::size_t>(output)];
    }

    // Adjoint sweep seeded with d output / d output = 1.
    void backward(Id output) {
        check_id(output, "backward");
        adj_.assign(op_.size(), 0.0);
        adj_[static_cast<std::size_t>(output)] = 1.0;
        for (std::size_t k = op_.size(); k-- > 0;) {
            const double ad = adj_[k];
            if (ad == 0.0) continue;
            switch (op_[k]) {
                case Op::Const:
                case Op::Var: break;
                case Op::Add:
                    adj_[a_[k]] += ad;
                    adj_[b_[k]] += ad;
                    break;
                case Op::Sub:
                    adj_[a_[k]] += ad;
                    adj_[b_[k]] -= ad;
                    break;
                case Op::Mul:
                    adj_[a_[k]] += ad * val_[b_[k]];
                    adj_[b_[k]] += ad * val_[a_[k]];
                    break;
                case Op::Div: {
                    const double inv = 1.0 / val_[b_[k]];
                    adj_[a_[k]] += ad * inv;
                    adj_[b_[k]] -= ad * val_[k] * inv;
                    break;
                }
                case Op::Neg: adj_[a_[k]] -= ad; break;
                case Op::Tanh: {
                    const double t = val_[k];
                    adj_[a_[k]] += ad * (1.0 - t * t);
                    break;
                }
                case Op::Fma:
                    adj_[a_[k]] += ad * val_[b_[k]];
                    adj_[b_[k]] += ad * val_[a_[k]];
                    adj_[c_[k]] += ad;
                    break;
            }
        }
        seeded_ = true;
    }

    double adjoint(Id id) const {
        if (!seeded_) throw std::runtime_error("tape adjoint requested before backward()");
        return adj_[static_cast<std::size_t>(id)];
    }

    // Adjoints of the Var leaves in creation order.
    std::vector<double> input_gradient() const {
        if (!seeded_) throw std::runtime_error("tape gradient requested before backward()");
        std::vector<double> g(var_ids_.size());
        for (std::size_t i = 0; i < var_ids_.size(); ++i) {
            g[i] = adj_[static_cast<std::size_t>(var_ids_[i])];
        }
        return g;
    }

  private:
    Id push(Op op, Id a, Id b, Id c, double value) {
        op_.push_back(op);
        a_.push_back(a);
        b_.push_back(b);
        c_.push_back(c);
        val_.push_back(value);
        return static_cast<Id>(op_.size() - 1);
    }

    void check_id(Id id, const char* what) const {
        if (id < 0 || static_cast<std::size_t>(id) >= op_.size()) {
            throw std::invalid_argument(std::string(what) + ": node id " + std::to_string(id) +
                                        " out of range");
        }
    }

    std::vector<Op> op_;
    std::vector<Id> a_, b_, c_;
    std::vector<double> val_;
    std::vector<double> adj_;
    std::vector<Id> var_ids_;
    bool seeded_ = false;
};

// Gradient of `output` with respect to every Var leaf, in creation order.
inline std::vector<double> backprop(Tape& tape, Tape::Id output) {
    tape.backward(output);
    return tape.input_gradient();
}

// Convenience handle for expression-style recording.
struct TV {
    Tape* tape = nullptr;
    Tape::Id id = -1;

    TV() = default;
    TV(Tape& t, Tape::Id i) : tape(&t), id(i) {}

    double value() const { return tape->value(id); }
};

inline TV operator+(TV a, TV b) { return {*a.tape, a.tape->add(a.id, b.id)}; }
inline TV operator-(TV a, TV b) { return {*a.tape, a.tape->sub(a.id, b.id)}; }
inline TV operator*(TV a, TV b) { return {*a.tape, a.tape->mul(a.id, b.id)}; }
inline TV operator/(TV a, TV b) { return {*a.tape, a.tape->div(a.id, b.id)}; }
inline TV operator-(TV a) { return {*a.tape, a.tape->neg(a.id)}; }
inline TV operator*(double s, TV a) { return {*a.tape, a.tape->mul(a.tape->constant(s), a.id)}; }
inline TV operator*(TV a, double s) { return s * a; }
inline TV operator+(TV a, double s) { return {*a.tape, a.tape->add(a.id, a.tape->constant(s))}; }
inline TV operator+(double s, TV a) { return a + s; }
inline TV operator-(double s, TV a) { return {*a.tape, a.tape->sub(a.tape->constant(s), a.id)}; }
inline TV operator-(TV a, double s) { return {*a.tape, a.tape->sub(a.id, a.tape->constant(s))}; }
inline TV tanh(TV a) { return {*a.tape, a.tape->tanh(a.id)}; }
inline TV fma(TV a, TV b, TV c) { return {*a.tape, a.tape->fma(a.id, b.id, c.id)}; }

}  // namespace elastireg
