from wrapsched.profiler import AffineModel, ProfileSet


def table_profiles(times_f, mems=None, times_b=None, x=0, y=0, w=0, dw=None,
                   k=0, u_times=None, u_max=8):
    """ProfileSet from explicit per-layer tables, constant in the microbatch.

    Sizes may be ints (uniform) or per-layer lists; dw defaults to w.
    """
    r = len(times_f)
    mems = mems if mems is not None else [0] * r
    times_b = times_b if times_b is not None else list(times_f)
    u_times = u_times if u_times is not None else [0] * r

    def per_layer(v):
        return list(v) if isinstance(v, (list, tuple)) else [v] * r

    xs, ys, ws, ks = per_layer(x), per_layer(y), per_layer(w), per_layer(k)
    dws = per_layer(dw) if dw is not None else list(ws)
    tm = {}
    mm = {}
    for i in range(r):
        tm[(i, "F")] = AffineModel(0.0, times_f[i])
        tm[(i, "B")] = AffineModel(0.0, times_b[i])
        tm[(i, "U")] = AffineModel(0.0, u_times[i])
        for pass_ in ("F", "B", "U"):
            mm[(i, pass_)] = AffineModel(0.0, mems[i])
    return ProfileSet(
        layer_count=r, time_models=tm, mem_models=mm,
        x_models={i: AffineModel(0.0, xs[i]) for i in range(r)},
        y_models={i: AffineModel(0.0, ys[i]) for i in range(r)},
        w_bytes={i: ws[i] for i in range(r)},
        dw_bytes={i: dws[i] for i in range(r)},
        k_bytes={i: ks[i] for i in range(r)},
        u_max_f=u_max, u_max_b=u_max,
    )
