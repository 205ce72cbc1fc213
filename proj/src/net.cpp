#include "nfmu/net.hpp"

#include "csv_detail.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace nfmu {

namespace {

int layer_in_width(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        return d->in;
    }
    if (const auto* s = std::get_if<ShiftScaleLayer>(&layer)) {
        return s->width;
    }
    return std::get<GatesLayer>(layer).width;
}

int layer_out_width(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        return d->out;
    }
    if (const auto* s = std::get_if<ShiftScaleLayer>(&layer)) {
        return s->width;
    }
    return std::get<GatesLayer>(layer).width;
}

Real apply_activation(Activation act, Real v) {
    return act == Activation::Tanh ? std::tanh(v) : v;
}

}  // namespace

int NetSpec::input_width() const {
    if (layers.empty()) {
        throw std::invalid_argument("NetSpec: empty layer list");
    }
    return layer_in_width(layers.front());
}

int NetSpec::output_width() const {
    if (layers.empty()) {
        throw std::invalid_argument("NetSpec: empty layer list");
    }
    return layer_out_width(layers.back());
}

void NetSpec::validate() const {
    if (layers.empty()) {
        throw std::invalid_argument("NetSpec: empty layer list");
    }
    int width = layer_in_width(layers.front());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layer_in_width(layers[i]) != width) {
            throw std::invalid_argument("NetSpec: layer " + std::to_string(i) +
                                        " expects width " + std::to_string(layer_in_width(layers[i])) +
                                        ", got " + std::to_string(width));
        }
        if (const auto* s = std::get_if<ShiftScaleLayer>(&layers[i])) {
            if (!s->trainable && (static_cast<int>(s->frozen_shift.size()) != s->width ||
                                  static_cast<int>(s->frozen_scale.size()) != s->width)) {
                throw std::invalid_argument("NetSpec: frozen shift/scale layer " +
                                            std::to_string(i) + " lacks its constants");
            }
        }
        width = layer_out_width(layers[i]);
    }
}

int layer_param_count(const Layer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        return d->in * d->out + (d->bias ? d->out : 0);
    }
    if (const auto* s = std::get_if<ShiftScaleLayer>(&layer)) {
        return s->trainable ? 2 * s->width : 0;
    }
    return 2 * std::get<GatesLayer>(layer).width;
}

int count_params(const NetSpec& spec) {
    int total = 0;
    for (const auto& layer : spec.layers) {
        total += layer_param_count(layer);
    }
    return total;
}

ParamVector make_params(const NetSpec& spec) {
    spec.validate();
    ParamVector p;
    p.offsets.reserve(spec.layers.size());
    int off = 0;
    for (const auto& layer : spec.layers) {
        const int count = layer_param_count(layer);
        p.offsets.push_back(count > 0 ? off : -1);
        off += count;
    }
    p.values.assign(off, 0.0);
    return p;
}

void init_params(const NetSpec& spec, ParamVector& params, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const int off = params.offsets[li];
        if (const auto* d = std::get_if<DenseLayer>(&spec.layers[li])) {
            const Real lim = std::sqrt(6.0 / (d->in + d->out));
            std::uniform_real_distribution<Real> dist(-lim, lim);
            for (int i = 0; i < d->in * d->out; ++i) {
                params.values[off + i] = dist(rng);
            }
            if (d->bias) {
                for (int i = 0; i < d->out; ++i) {
                    params.values[off + d->in * d->out + i] = 0.0;
                }
            }
        } else if (const auto* s = std::get_if<ShiftScaleLayer>(&spec.layers[li])) {
            if (s->trainable) {
                for (int i = 0; i < s->width; ++i) {
                    params.values[off + i] = 0.0;             // shift
                    params.values[off + s->width + i] = 1.0;  // scale
                }
            }
        } else {
            const auto& g = std::get<GatesLayer>(spec.layers[li]);
            for (int i = 0; i < g.width; ++i) {
                params.values[off + i] = 0.0;             // p_ann
                params.values[off + g.width + i] = 1.0;   // p_fmu
            }
        }
    }
}

const Vec& forward(const NetSpec& spec, const ParamVector& params, const Vec& input,
                   const Vec& side, ForwardRecord& rec) {
    if (static_cast<int>(input.size()) != spec.input_width()) {
        throw std::invalid_argument("forward: input width " + std::to_string(input.size()) +
                                    " does not match spec width " +
                                    std::to_string(spec.input_width()));
    }
    const std::size_t nl = spec.layers.size();
    rec.inputs.resize(nl);
    rec.outputs.resize(nl);
    rec.side = side;
    rec.n_layers = static_cast<int>(nl);

    const Vec* cur = &input;
    for (std::size_t li = 0; li < nl; ++li) {
        rec.inputs[li] = *cur;
        const int off = params.offsets[li];
        Vec& out = rec.outputs[li];
        if (const auto* d = std::get_if<DenseLayer>(&spec.layers[li])) {
            out.resize(d->out);
            const Real* w = params.values.data() + off;
            const Real* b = d->bias ? w + d->in * d->out : nullptr;
            for (int o = 0; o < d->out; ++o) {
                Real acc = b ? b[o] : 0.0;
                const Real* row = w + static_cast<std::size_t>(o) * d->in;
                for (int i = 0; i < d->in; ++i) {
                    acc += row[i] * (*cur)[i];
                }
                out[o] = apply_activation(d->act, acc);
            }
        } else if (const auto* s = std::get_if<ShiftScaleLayer>(&spec.layers[li])) {
            out.resize(s->width);
            const Real* shift = s->trainable ? params.values.data() + off : s->frozen_shift.data();
            const Real* scale = s->trainable ? params.values.data() + off + s->width
                                             : s->frozen_scale.data();
            for (int i = 0; i < s->width; ++i) {
                out[i] = s->inverse ? (*cur)[i] / scale[i] - shift[i]
                                    : scale[i] * ((*cur)[i] + shift[i]);
            }
        } else {
            const auto& g = std::get<GatesLayer>(spec.layers[li]);
            if (!side.empty() && static_cast<int>(side.size()) != g.width) {
                throw std::invalid_argument("forward: gates side width mismatch");
            }
            out.resize(g.width);
            const Real* p_ann = params.values.data() + off;
            const Real* p_fmu = p_ann + g.width;
            for (int i = 0; i < g.width; ++i) {
                const Real side_v = side.empty() ? 0.0 : side[i];
                out[i] = p_ann[i] * (*cur)[i] + p_fmu[i] * side_v;
            }
        }
        cur = &out;
    }
    return rec.outputs.back();
}

void backward(const NetSpec& spec, const ParamVector& params, const ForwardRecord& rec,
              const Vec& grad_output, Vec& grad_input, Vec& grad_side, Vec& grad_params) {
    if (rec.n_layers != static_cast<int>(spec.layers.size())) {
        throw std::invalid_argument("backward: stale forward record (layer count mismatch)");
    }
    if (static_cast<int>(grad_output.size()) != spec.output_width()) {
        throw std::invalid_argument("backward: upstream gradient width mismatch");
    }
    grad_params.resize(params.values.size(), 0.0);
    grad_side.assign(rec.side.size(), 0.0);

    Vec up = grad_output;
    Vec down;
    for (int li = static_cast<int>(spec.layers.size()) - 1; li >= 0; --li) {
        const Vec& in = rec.inputs[li];
        const Vec& out = rec.outputs[li];
        if (static_cast<int>(out.size()) != layer_out_width(spec.layers[li])) {
            throw std::invalid_argument("backward: stale forward record (width mismatch at layer " +
                                        std::to_string(li) + ")");
        }
        const int off = params.offsets[li];
        if (const auto* d = std::get_if<DenseLayer>(&spec.layers[li])) {
            down.assign(d->in, 0.0);
            const Real* w = params.values.data() + off;
            Real* gw = grad_params.data() + off;
            Real* gb = d->bias ? gw + d->in * d->out : nullptr;
            for (int o = 0; o < d->out; ++o) {
                Real dpre = up[o];
                if (d->act == Activation::Tanh) {
                    dpre *= 1.0 - out[o] * out[o];
                }
                const Real* row = w + static_cast<std::size_t>(o) * d->in;
                Real* grow = gw + static_cast<std::size_t>(o) * d->in;
                for (int i = 0; i < d->in; ++i) {
                    grow[i] += dpre * in[i];
                    down[i] += row[i] * dpre;
                }
                if (gb) {
                    gb[o] += dpre;
                }
            }
        } else if (const auto* s = std::get_if<ShiftScaleLayer>(&spec.layers[li])) {
            down.assign(s->width, 0.0);
            const Real* shift = s->trainable ? params.values.data() + off : s->frozen_shift.data();
            const Real* scale = s->trainable ? params.values.data() + off + s->width
                                             : s->frozen_scale.data();
            Real* gshift = s->trainable ? grad_params.data() + off : nullptr;
            Real* gscale = s->trainable ? grad_params.data() + off + s->width : nullptr;
            for (int i = 0; i < s->width; ++i) {
                if (s->inverse) {
                    down[i] = up[i] / scale[i];
                    if (s->trainable) {
                        gshift[i] += -up[i];
                        gscale[i] += -up[i] * in[i] / (scale[i] * scale[i]);
                    }
                } else {
                    down[i] = up[i] * scale[i];
                    if (s->trainable) {
                        gshift[i] += up[i] * scale[i];
                        gscale[i] += up[i] * (in[i] + shift[i]);
                    }
                }
            }
        } else {
            const auto& g = std::get<GatesLayer>(spec.layers[li]);
            down.assign(g.width, 0.0);
            const Real* p_ann = params.values.data() + off;
            const Real* p_fmu = p_ann + g.width;
            Real* gp_ann = grad_params.data() + off;
            Real* gp_fmu = gp_ann + g.width;
            for (int i = 0; i < g.width; ++i) {
                const Real side_v = rec.side.empty() ? 0.0 : rec.side[i];
                down[i] = up[i] * p_ann[i];
                gp_ann[i] += up[i] * in[i];
                gp_fmu[i] += up[i] * side_v;
                if (!grad_side.empty()) {
                    grad_side[i] += up[i] * p_fmu[i];
                }
            }
        }
        up.swap(down);
    }
    grad_input = up;
}

ShiftScaleStats shift_scale_from_stats(const std::vector<Vec>& samples) {
    if (samples.size() < 2) {
        throw std::invalid_argument("shift_scale_from_stats: need at least 2 samples");
    }
    const std::size_t width = samples.front().size();
    ShiftScaleStats st;
    st.shift.assign(width, 0.0);
    st.scale.assign(width, 1.0);
    const Real n = static_cast<Real>(samples.size());
    for (std::size_t c = 0; c < width; ++c) {
        Real mean = 0.0;
        for (const auto& row : samples) {
            mean += row[c];
        }
        mean /= n;
        Real var = 0.0;
        for (const auto& row : samples) {
            var += (row[c] - mean) * (row[c] - mean);
        }
        var /= n;  // population convention
        st.shift[c] = -mean;
        if (var > 0.0) {
            st.scale[c] = 1.0 / std::sqrt(var);
        } else {
            st.scale[c] = 1.0;
            st.degenerate_channels.push_back(static_cast<int>(c));
            std::fprintf(stderr, "warning: zero-variance channel %zu, scale set to 1\n", c);
        }
    }
    return st;
}

void write_params(const std::string& path, const ParamVector& params) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write file: " + path);
    }
    out << "index,value\n";
    for (int i = 0; i < params.size(); ++i) {
        out << i << ',' << csv::format_real(params.values[i]) << '\n';
    }
}

ParamVector read_params(const std::string& path, const NetSpec& spec) {
    const auto tab = csv::read_table(path);
    if (tab.header.size() != 2 || tab.header[0] != "index" || tab.header[1] != "value") {
        throw std::runtime_error(path + ":1: expected header 'index,value'");
    }
    ParamVector p = make_params(spec);
    if (static_cast<int>(tab.rows.size()) != p.size()) {
        throw std::runtime_error(path + ": expected " + std::to_string(p.size()) +
                                 " parameters, got " + std::to_string(tab.rows.size()));
    }
    for (const auto& row : tab.rows) {
        const int idx = static_cast<int>(row[0]);
        if (idx < 0 || idx >= p.size()) {
            throw std::runtime_error(path + ": parameter index out of range");
        }
        p.values[idx] = row[1];
    }
    return p;
}

std::string describe(const NetSpec& spec) {
    std::string out;
    for (const auto& layer : spec.layers) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            out += "dense in=" + std::to_string(d->in) + " out=" + std::to_string(d->out) +
                   " act=" + (d->act == Activation::Tanh ? "tanh" : "identity") +
                   " bias=" + (d->bias ? "1" : "0");
        } else if (const auto* s = std::get_if<ShiftScaleLayer>(&layer)) {
            out += "shift_scale width=" + std::to_string(s->width) +
                   " trainable=" + (s->trainable ? "1" : "0") +
                   " inverse=" + (s->inverse ? "1" : "0");
            if (!s->trainable) {
                out += " shift=";
                for (std::size_t i = 0; i < s->frozen_shift.size(); ++i) {
                    out += (i ? ";" : "") + csv::format_real(s->frozen_shift[i]);
                }
                out += " scale=";
                for (std::size_t i = 0; i < s->frozen_scale.size(); ++i) {
                    out += (i ? ";" : "") + csv::format_real(s->frozen_scale[i]);
                }
            }
        } else {
            out += "gates width=" + std::to_string(std::get<GatesLayer>(layer).width);
        }
        out += " params=" + std::to_string(layer_param_count(layer)) + "\n";
    }
    out += "total=" + std::to_string(count_params(spec)) + "\n";
    return out;
}

}  // namespace nfmu
