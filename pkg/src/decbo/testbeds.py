"""Problem generators: closed-form quadratics, heterogeneous regularized
logistic regression, and a synthetic label-cleaning task.

The quadratic testbed carries its own ground truth (y*, the upper
objective, and its gradient in closed form) and is the main validation
vehicle. The two logistic-style generators mirror common hyperparameter
optimization setups: per-coordinate ridge weights for the regression
task, and one sample-reliability weight per training point for the
cleaning task.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BadParameter
from .problems import AgentData, AgentOracles, BilevelProblem, SmoothnessMeta

Array = np.ndarray

# Metadata for the logistic problems is certified on a box of hyperparameter
# values; mu and the curvature bound use the worst corner of this box.
LAMBDA_BOX = 2.0


def _random_orthogonal(rng: np.random.Generator, q: int) -> Array:
    mat, _ = np.linalg.qr(rng.standard_normal((q, q)))
    return mat


def _symmetrize(m: Array) -> Array:
    return 0.5 * (m + m.T)


# ---------------------------------------------------------------------------
# Quadratic testbed
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticTestbed:
    """Quadratic bilevel instance with every reference quantity in closed form.

    Lower level per agent: 0.5 y'A_i y - y'(B_i x + b_i); upper level:
    0.5|x - c_i|^2 + 0.5|y - d_i|^2. The averaged stationarity condition
    gives y*(x) = Abar^{-1} (Bbar x + bbar), an affine map, so the upper
    objective is an explicit strongly convex quadratic.
    """

    problem: BilevelProblem
    a_mats: Array  # (n, q, q)
    b_mats: Array  # (n, q, p)
    b_vecs: Array  # (n, q)
    c_vecs: Array  # (n, p)
    d_vecs: Array  # (n, q)

    @property
    def a_bar(self) -> Array:
        return self.a_mats.mean(axis=0)

    @property
    def b_bar(self) -> Array:
        return self.b_mats.mean(axis=0)

    def y_star(self, x: Array) -> Array:
        return np.linalg.solve(self.a_bar, self.b_bar @ x + self.b_vecs.mean(axis=0))

    def y_star_mixed(self, xs: Array) -> Array:
        """Minimizer of the averaged lower loss with per-agent x columns."""
        rhs = np.mean([self.b_mats[i] @ xs[:, i] for i in range(xs.shape[1])], axis=0)
        return np.linalg.solve(self.a_bar, rhs + self.b_vecs.mean(axis=0))

    def phi(self, x: Array) -> float:
        y = self.y_star(x)
        vals = [
            0.5 * np.sum((x - self.c_vecs[i]) ** 2) + 0.5 * np.sum((y - self.d_vecs[i]) ** 2)
            for i in range(self.c_vecs.shape[0])
        ]
        return float(np.mean(vals))

    def grad_phi(self, x: Array) -> Array:
        y = self.y_star(x)
        sensitivity = np.linalg.solve(self.a_bar, self.b_bar)  # dy*/dx, (q, p)
        return (x - self.c_vecs.mean(axis=0)) + sensitivity.T @ (y - self.d_vecs.mean(axis=0))

    def phi_curvature(self) -> tuple[float, float]:
        """Smallest and largest eigenvalue of the upper objective Hessian."""
        sensitivity = np.linalg.solve(self.a_bar, self.b_bar)
        eigs = np.linalg.eigvalsh(np.eye(sensitivity.shape[1]) + sensitivity.T @ sensitivity)
        return float(eigs[0]), float(eigs[-1])


def _quadratic_agent(a, b_mat, b_vec, c, d, sigma_f, sigma_g1, sigma_g2) -> AgentOracles:
    def f_value(x, y):
        return 0.5 * float(np.sum((x - c) ** 2) + np.sum((y - d) ** 2))

    def g_value(x, y):
        return float(0.5 * y @ (a @ y) - y @ (b_mat @ x + b_vec))

    def grad_f_s(x, y, rng, batch=1):
        gx = (x - c) + sigma_f * rng.standard_normal(x.shape)
        gy = (y - d) + sigma_f * rng.standard_normal(y.shape)
        return gx, gy

    def grad_y_g_s(x, y, rng, batch=1):
        return a @ y - b_mat @ x - b_vec + sigma_g1 * rng.standard_normal(y.shape)

    def hess_s(x, y, rng, batch=1):
        noise = _symmetrize(rng.standard_normal(a.shape))
        return a + sigma_g2 * noise

    def jac_s(x, y, rng, batch=1):
        return -b_mat.T + sigma_g2 * rng.standard_normal((b_mat.shape[1], b_mat.shape[0]))

    def hess_jac_s(x, y, rng, batch=1):
        return hess_s(x, y, rng, batch), jac_s(x, y, rng, batch)

    def hess_vp_s(x, y, v, rng, batch=1):
        return hess_s(x, y, rng, batch) @ v

    return AgentOracles(
        f_value=f_value,
        g_value=g_value,
        grad_x_f=lambda x, y: x - c,
        grad_y_f=lambda x, y: y - d,
        grad_y_g=lambda x, y: a @ y - b_mat @ x - b_vec,
        hess_yy_g=lambda x, y: a.copy(),
        hess_yy_g_vp=lambda x, y, v: a @ v,
        jac_xy_g=lambda x, y: -b_mat.T,
        grad_f_s=grad_f_s,
        grad_y_g_s=grad_y_g_s,
        hess_yy_g_s=hess_s,
        hess_yy_g_vp_s=hess_vp_s,
        jac_xy_g_s=jac_s,
        hess_jac_s=hess_jac_s,
    )


def make_quadratic_testbed(
    n: int,
    p: int,
    q: int,
    heterogeneity: float,
    seed: int,
    noise_std: float = 0.0,
    f_heterogeneity: float = 1.0,
    spectrum: tuple[float, float] = (1.0, 3.0),
) -> QuadraticTestbed:
    """Generate a quadratic bilevel instance.

    heterogeneity scales the per-agent spread of the lower-level data
    (A_i, B_i, b_i); zero makes every agent's g identical. f_heterogeneity
    does the same for the upper-level anchors (c_i, d_i). noise_std feeds
    the stochastic oracle variants (zero keeps them exact).
    """
    if heterogeneity < 0:
        raise BadParameter(f"heterogeneity must be >= 0, got {heterogeneity}")
    rng = np.random.default_rng(seed)
    lo, hi = spectrum
    basis = _random_orthogonal(rng, q)
    a0 = basis @ np.diag(rng.uniform(lo, hi, size=q)) @ basis.T
    b0 = rng.standard_normal((q, p)) / np.sqrt(max(p, q))
    bv0 = rng.standard_normal(q)
    c0 = rng.standard_normal(p)
    d0 = rng.standard_normal(q)

    a_mats = np.empty((n, q, q))
    b_mats = np.empty((n, q, p))
    b_vecs = np.empty((n, q))
    c_vecs = np.empty((n, p))
    d_vecs = np.empty((n, q))
    for i in range(n):
        a_mats[i] = _symmetrize(a0 + heterogeneity * 0.3 * _symmetrize(rng.standard_normal((q, q))))
        b_mats[i] = b0 + heterogeneity * 0.3 * rng.standard_normal((q, p)) / np.sqrt(max(p, q))
        b_vecs[i] = bv0 + heterogeneity * rng.standard_normal(q)
        c_vecs[i] = c0 + f_heterogeneity * rng.standard_normal(p)
        d_vecs[i] = d0 + f_heterogeneity * rng.standard_normal(q)

    # A uniform diagonal shift keeps every A_i well-conditioned without
    # breaking the identical-agents property at heterogeneity zero.
    min_eig = min(np.linalg.eigvalsh(a_mats[i])[0] for i in range(n))
    if min_eig < 0.5 * lo:
        a_mats += (0.5 * lo - min_eig) * np.eye(q)

    mu = float(min(np.linalg.eigvalsh(a_mats[i])[0] for i in range(n)))
    a_max = float(max(np.linalg.eigvalsh(a_mats[i])[-1] for i in range(n)))
    b_norm = float(max(np.linalg.norm(b_mats[i], 2) for i in range(n)))
    anchor = float(max(np.sqrt(np.sum(c_vecs[i] ** 2) + np.sum(d_vecs[i] ** 2)) for i in range(n)))
    meta = SmoothnessMeta(
        mu=mu,
        l_f0=anchor + 10.0,  # valid gradient bound on the radius-10 iterate ball
        l_f1=1.0,
        l_g1=a_max + b_norm,
        l_g2=0.0,
        sigma_f=noise_std,
        sigma_g1=noise_std,
        sigma_g2=noise_std,
        homogeneous_g=(heterogeneity == 0.0),
    )
    agents = [
        _quadratic_agent(a_mats[i], b_mats[i], b_vecs[i], c_vecs[i], d_vecs[i], noise_std, noise_std, noise_std)
        for i in range(n)
    ]
    problem = BilevelProblem(n=n, p=p, q=q, agents=agents, meta=meta)
    return QuadraticTestbed(
        problem=problem, a_mats=a_mats, b_mats=b_mats, b_vecs=b_vecs, c_vecs=c_vecs, d_vecs=d_vecs
    )


# ---------------------------------------------------------------------------
# Logistic regression with per-coordinate ridge weights
# ---------------------------------------------------------------------------


def _softplus(t: Array) -> Array:
    # log(1 + exp(-t)) computed stably
    return np.logaddexp(0.0, -t)


def _batch_indices(rng, size: int, batch: int) -> Array | None:
    """Uniform-with-replacement minibatch; batch<=0 or >=size means full batch."""
    if batch <= 0 or batch >= size:
        return None
    return rng.integers(0, size, size=batch)


def _logistic_agent(train_x, train_y, val_x, val_y) -> AgentOracles:
    n_tr = train_x.shape[0]
    n_val = val_x.shape[0]

    def margins(features, labels, tau):
        return labels * (features @ tau)

    def f_value(lam, tau):
        return float(np.mean(_softplus(margins(val_x, val_y, tau))))

    def g_value(lam, tau):
        data = float(np.mean(_softplus(margins(train_x, train_y, tau))))
        return data + 0.5 * float(np.exp(lam) @ (tau * tau))

    def _data_grad(features, labels, tau):
        s = margins(features, labels, tau)
        # d/dt log(1+e^-t) = -expit(-t)
        coeff = -expit(-s) * labels
        return features.T @ coeff / features.shape[0]

    def grad_y_f(lam, tau):
        return _data_grad(val_x, val_y, tau)

    def grad_y_g(lam, tau):
        return _data_grad(train_x, train_y, tau) + np.exp(lam) * tau

    def _curvatures(features, labels, tau):
        s = margins(features, labels, tau)
        return expit(s) * expit(-s)

    def hess_yy_g(lam, tau):
        w = _curvatures(train_x, train_y, tau)
        return (train_x.T * w) @ train_x / n_tr + np.diag(np.exp(lam))

    def hess_yy_g_vp(lam, tau, v):
        w = _curvatures(train_x, train_y, tau)
        return train_x.T @ (w * (train_x @ v)) / n_tr + np.exp(lam) * v

    def jac_xy_g(lam, tau):
        # only the ridge term couples lam and tau
        return np.diag(np.exp(lam) * tau)

    def grad_f_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_val, batch)
        fx, fy = (val_x, val_y) if idx is None else (val_x[idx], val_y[idx])
        return np.zeros_like(lam), _data_grad(fx, fy, tau)

    def grad_y_g_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        fx, fy = (train_x, train_y) if idx is None else (train_x[idx], train_y[idx])
        return _data_grad(fx, fy, tau) + np.exp(lam) * tau

    def hess_yy_g_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        fx, fy = (train_x, train_y) if idx is None else (train_x[idx], train_y[idx])
        w = expit(fy * (fx @ tau)) * expit(-fy * (fx @ tau))
        return (fx.T * w) @ fx / fx.shape[0] + np.diag(np.exp(lam))

    def hess_yy_g_vp_s(lam, tau, v, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        fx, fy = (train_x, train_y) if idx is None else (train_x[idx], train_y[idx])
        s = fy * (fx @ tau)
        w = expit(s) * expit(-s)
        return fx.T @ (w * (fx @ v)) / fx.shape[0] + np.exp(lam) * v

    def jac_xy_g_s(lam, tau, rng, batch=1):
        # the data loss does not depend on lam, so the sampled Jacobian is exact
        return jac_xy_g(lam, tau)

    def hess_jac_s(lam, tau, rng, batch=1):
        return hess_yy_g_s(lam, tau, rng, batch), jac_xy_g(lam, tau)

    return AgentOracles(
        f_value=f_value,
        g_value=g_value,
        grad_x_f=lambda lam, tau: np.zeros_like(lam),
        grad_y_f=grad_y_f,
        grad_y_g=grad_y_g,
        hess_yy_g=hess_yy_g,
        hess_yy_g_vp=hess_yy_g_vp,
        jac_xy_g=jac_xy_g,
        grad_f_s=grad_f_s,
        grad_y_g_s=grad_y_g_s,
        hess_yy_g_s=hess_yy_g_s,
        hess_yy_g_vp_s=hess_yy_g_vp_s,
        jac_xy_g_s=jac_xy_g_s,
        hess_jac_s=hess_jac_s,
    )


def make_synthetic_logistic(
    n: int,
    p: int,
    q: int | None = None,
    samples_per_agent: int = 100,
    noise_rate: float = 0.1,
    seed: int = 0,
    val_samples: int | None = None,
) -> BilevelProblem:
    """Heterogeneous regularized logistic regression.

    Upper variable: per-coordinate log ridge weights lam (dim p). Lower
    variable: classifier tau (dim q = p). Agent i draws Gaussian features
    whose vector scale grows linearly with the agent index (element
    standard deviation i/sqrt(p)), which is the heterogeneity source;
    labels are sign(x'tau_true + noise_rate * eps). Losses are averaged
    over each agent's sample set. The per-vector scaling keeps the
    worst-agent curvature within reach of percent-level stepsizes while
    preserving the 1..n spread of data distributions.
    """
    q = p if q is None else q
    if q != p:
        raise BadParameter(f"ridge pairs one weight per coordinate, need p == q, got {p} != {q}")
    if noise_rate < 0:
        raise BadParameter(f"noise_rate must be >= 0, got {noise_rate}")
    if n < 1 or samples_per_agent < 1:
        raise BadParameter("need n >= 1 agents and at least one sample each")
    val_samples = samples_per_agent if val_samples is None else val_samples
    rng = np.random.default_rng(seed)
    tau_true = rng.standard_normal(p)

    agents = []
    datasets = []
    curvature = 0.0
    grad_bound = 0.0
    val_curvature = 0.0
    for i in range(1, n + 1):
        scale = float(i) / np.sqrt(p)

        def draw(count):
            feats = scale * rng.standard_normal((count, p))
            labels = np.sign(feats @ tau_true + noise_rate * rng.standard_normal(count))
            labels[labels == 0] = 1.0
            return feats, labels

        train_x, train_y = draw(samples_per_agent)
        val_x, val_y = draw(val_samples)
        datasets.append(AgentData(train_x=train_x, train_y=train_y, val_x=val_x, val_y=val_y))
        agents.append(_logistic_agent(train_x, train_y, val_x, val_y))
        curvature = max(curvature, np.linalg.norm(train_x, 2) ** 2 / (4.0 * samples_per_agent))
        val_curvature = max(val_curvature, np.linalg.norm(val_x, 2) ** 2 / (4.0 * val_samples))
        grad_bound = max(grad_bound, float(np.mean(np.linalg.norm(val_x, axis=1))))

    box = np.exp(LAMBDA_BOX)
    meta = SmoothnessMeta(
        mu=float(np.exp(-LAMBDA_BOX)),
        l_f0=grad_bound,
        l_f1=float(val_curvature),
        l_g1=float(curvature + box),
        l_g2=float(curvature + box),  # third-derivative scale of the ridge dominates
        sigma_f=0.0,
        sigma_g1=0.0,
        sigma_g2=0.0,
        homogeneous_g=(n == 1),
    )
    return BilevelProblem(n=n, p=p, q=q, agents=agents, meta=meta, datasets=datasets)


# ---------------------------------------------------------------------------
# Synthetic label-cleaning task
# ---------------------------------------------------------------------------


def _cleaning_agent(lam_slice, train_x, train_y, val_x, val_y, c_r, p) -> AgentOracles:
    n_tr = train_x.shape[0]

    def weights(lam):
        return expit(lam[lam_slice])

    def f_value(lam, tau):
        return float(np.mean(_softplus(val_y * (val_x @ tau))))

    def g_value(lam, tau):
        losses = _softplus(train_y * (train_x @ tau))
        return float(weights(lam) @ losses / n_tr + c_r * (tau @ tau))

    def grad_y_f(lam, tau):
        s = val_y * (val_x @ tau)
        return val_x.T @ (-expit(-s) * val_y) / val_x.shape[0]

    def grad_y_g(lam, tau):
        s = train_y * (train_x @ tau)
        coeff = weights(lam) * (-expit(-s)) * train_y
        return train_x.T @ coeff / n_tr + 2.0 * c_r * tau

    def grad_x_f(lam, tau):
        return np.zeros(p)

    def hess_yy_g(lam, tau):
        s = train_y * (train_x @ tau)
        w = weights(lam) * expit(s) * expit(-s)
        return (train_x.T * w) @ train_x / n_tr + 2.0 * c_r * np.eye(train_x.shape[1])

    def hess_yy_g_vp(lam, tau, v):
        s = train_y * (train_x @ tau)
        w = weights(lam) * expit(s) * expit(-s)
        return train_x.T @ (w * (train_x @ v)) / n_tr + 2.0 * c_r * v

    def jac_xy_g(lam, tau):
        s = train_y * (train_x @ tau)
        sig = weights(lam)
        rows = (sig * (1.0 - sig) * (-expit(-s)) * train_y)[:, None] * train_x / n_tr
        jac = np.zeros((p, train_x.shape[1]))
        jac[lam_slice] = rows
        return jac

    def grad_f_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, val_x.shape[0], batch)
        fx, fy = (val_x, val_y) if idx is None else (val_x[idx], val_y[idx])
        s = fy * (fx @ tau)
        return np.zeros(p), fx.T @ (-expit(-s) * fy) / fx.shape[0]

    def grad_y_g_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        if idx is None:
            return grad_y_g(lam, tau)
        fx, fy = train_x[idx], train_y[idx]
        sig = expit(lam[lam_slice][idx])
        s = fy * (fx @ tau)
        return fx.T @ (sig * (-expit(-s)) * fy) / idx.size + 2.0 * c_r * tau

    def hess_yy_g_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        if idx is None:
            return hess_yy_g(lam, tau)
        fx, fy = train_x[idx], train_y[idx]
        sig = expit(lam[lam_slice][idx])
        s = fy * (fx @ tau)
        w = sig * expit(s) * expit(-s)
        return (fx.T * w) @ fx / idx.size + 2.0 * c_r * np.eye(fx.shape[1])

    def hess_yy_g_vp_s(lam, tau, v, rng, batch=1):
        return hess_yy_g_s(lam, tau, rng, batch) @ v

    def jac_xy_g_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        if idx is None:
            return jac_xy_g(lam, tau)
        fx, fy = train_x[idx], train_y[idx]
        sig = expit(lam[lam_slice][idx])
        s = fy * (fx @ tau)
        jac = np.zeros((p, train_x.shape[1]))
        rows = (sig * (1.0 - sig) * (-expit(-s)) * fy)[:, None] * fx / idx.size
        base = lam_slice.start
        for pos, sample in enumerate(idx):
            jac[base + sample] += rows[pos]
        return jac

    def hess_jac_s(lam, tau, rng, batch=1):
        idx = _batch_indices(rng, n_tr, batch)
        if idx is None:
            return hess_yy_g(lam, tau), jac_xy_g(lam, tau)
        fx, fy = train_x[idx], train_y[idx]
        sig = expit(lam[lam_slice][idx])
        s = fy * (fx @ tau)
        w = sig * expit(s) * expit(-s)
        hess = (fx.T * w) @ fx / idx.size + 2.0 * c_r * np.eye(fx.shape[1])
        jac = np.zeros((p, train_x.shape[1]))
        rows = (sig * (1.0 - sig) * (-expit(-s)) * fy)[:, None] * fx / idx.size
        base = lam_slice.start
        for pos, sample in enumerate(idx):
            jac[base + sample] += rows[pos]
        return hess, jac

    return AgentOracles(
        f_value=f_value,
        g_value=g_value,
        grad_x_f=grad_x_f,
        grad_y_f=grad_y_f,
        grad_y_g=grad_y_g,
        hess_yy_g=hess_yy_g,
        hess_yy_g_vp=hess_yy_g_vp,
        jac_xy_g=jac_xy_g,
        grad_f_s=grad_f_s,
        grad_y_g_s=grad_y_g_s,
        hess_yy_g_s=hess_yy_g_s,
        hess_yy_g_vp_s=hess_yy_g_vp_s,
        jac_xy_g_s=jac_xy_g_s,
        hess_jac_s=hess_jac_s,
    )


def make_synthetic_hypercleaning(
    n: int,
    features: int,
    samples_per_agent: int,
    corruption_rate: float,
    c_r: float,
    seed: int = 0,
    val_samples: int | None = None,
    margin: float = 1.5,
) -> BilevelProblem:
    """Label-cleaning task on synthetic Gaussian class clusters.

    Each training sample across the whole network owns one reliability
    hyperparameter, so the upper dimension is n * samples_per_agent and
    agent i's lower loss touches only its own slice. A corruption_rate
    fraction of training labels is flipped; validation labels stay clean.
    The squared-norm regularizer makes the lower level 2*c_r strongly
    convex globally.
    """
    if c_r <= 0:
        raise BadParameter(f"c_r must be positive, got {c_r}")
    if not (0.0 <= corruption_rate <= 1.0):
        raise BadParameter(f"corruption_rate must be in [0,1], got {corruption_rate}")
    if n < 1 or samples_per_agent < 1 or features < 1:
        raise BadParameter("need at least one agent, sample, and feature")
    val_samples = samples_per_agent if val_samples is None else val_samples
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(features)
    direction /= np.linalg.norm(direction)
    p = n * samples_per_agent

    def draw(count, spread):
        labels = rng.choice([-1.0, 1.0], size=count)
        feats = labels[:, None] * (margin * direction)[None, :] + spread * rng.standard_normal((count, features))
        return feats, labels

    agents = []
    datasets = []
    curvature = 0.0
    val_curvature = 0.0
    grad_bound = 0.0
    for i in range(n):
        spread = 1.0 + 0.5 * i / max(n - 1, 1)
        train_x, train_y = draw(samples_per_agent, spread)
        val_x, val_y = draw(val_samples, spread)
        flips = int(round(corruption_rate * samples_per_agent))
        if flips:
            idx = rng.choice(samples_per_agent, size=flips, replace=False)
            train_y = train_y.copy()
            train_y[idx] *= -1.0
        lam_slice = slice(i * samples_per_agent, (i + 1) * samples_per_agent)
        datasets.append(AgentData(train_x=train_x, train_y=train_y, val_x=val_x, val_y=val_y))
        agents.append(_cleaning_agent(lam_slice, train_x, train_y, val_x, val_y, c_r, p))
        curvature = max(curvature, np.linalg.norm(train_x, 2) ** 2 / (4.0 * samples_per_agent))
        val_curvature = max(val_curvature, np.linalg.norm(val_x, 2) ** 2 / (4.0 * val_samples))
        grad_bound = max(grad_bound, float(np.mean(np.linalg.norm(val_x, axis=1))))

    row_norm = max(float(np.max(np.linalg.norm(d.train_x, axis=1))) for d in datasets)
    # sigmoid'' peaks at 1/(6 sqrt(3)); reliability-weight curvature couples to
    # the per-sample loss magnitude over the declared iterate region.
    loss_scale = np.log1p(np.exp(20.0 * row_norm)) / samples_per_agent
    meta = SmoothnessMeta(
        mu=2.0 * c_r,
        l_f0=grad_bound,
        l_f1=float(val_curvature),
        l_g1=float(curvature + 2.0 * c_r + row_norm / (4.0 * np.sqrt(samples_per_agent)) + 0.0963 * loss_scale),
        l_g2=float(curvature + row_norm),
        homogeneous_g=False,
    )
    return BilevelProblem(n=n, p=p, q=features, agents=agents, meta=meta, datasets=datasets)


def dump_datasets(problem: BilevelProblem, out_dir) -> list[str]:
    """Write each agent's samples to CSV (rows = samples, last column label).

    Training and validation sets go to separate files; returns the paths.
    """
    from pathlib import Path

    if problem.datasets is None:
        raise BadParameter("problem carries no datasets to dump")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, data in enumerate(problem.datasets):
        for tag, feats, labels in (("train", data.train_x, data.train_y), ("val", data.val_x, data.val_y)):
            path = out / f"agent{i:03d}_{tag}.csv"
            rows = np.column_stack([feats, labels])
            np.savetxt(path, rows, delimiter=",", fmt="%.17g")
            paths.append(str(path))
    return paths
