"""tanh multilayer perceptron with a softmax output layer."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def init_params(sizes, rng):
    """Glorot-uniform weights and biases for consecutive layer ``sizes``."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def forward(weights, biases, X):
    acts = [X]
    a = X
    for W, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(a @ W + b)
        acts.append(a)
    z = a @ weights[-1] + biases[-1]
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return acts, p


def loss(weights, biases, X, y_onehot, alpha):
    _, p = forward(weights, biases, X)
    ce = -np.sum(y_onehot * np.log(np.clip(p, 1e-300, None))) / X.shape[0]
    return ce + alpha * sum(float(np.sum(W * W)) for W in weights)


def _backprop(weights, biases, X, y_onehot, alpha, gW, gb):
    """Write gradients into the preallocated ``gW``/``gb`` arrays; returns softmax output."""
    acts, p = forward(weights, biases, X)
    delta = (p - y_onehot) / X.shape[0]
    for layer in range(len(weights) - 1, -1, -1):
        np.dot(acts[layer].T, delta, out=gW[layer])
        gW[layer] += (2.0 * alpha) * weights[layer]
        np.sum(delta, axis=0, out=gb[layer])
        if layer > 0:
            delta = (delta @ weights[layer].T) * (1.0 - acts[layer] ** 2)
    return p


def mlp_gradient(weights, biases, X, y_onehot, alpha):
    """Backpropagated gradient of mean cross-entropy + alpha * sum ||W||^2.

    Returns ``(loss, weight_grads, bias_grads)``; biases are not penalized.
    """
    gW = [np.empty_like(W) for W in weights]
    gb = [np.empty_like(b) for b in biases]
    p = _backprop(weights, biases, X, y_onehot, alpha, gW, gb)
    ce = -np.sum(y_onehot * np.log(np.clip(p, 1e-300, None))) / X.shape[0]
    value = ce + alpha * sum(float(np.sum(W * W)) for W in weights)
    return value, gW, gb


def _flat_views(shapes):
    """One contiguous buffer plus per-layer views into it."""
    sizes = [int(np.prod(s)) for s in shapes]
    flat = np.zeros(sum(sizes))
    views, pos = [], 0
    for shape, size in zip(shapes, sizes):
        views.append(flat[pos:pos + size].reshape(shape))
        pos += size
    return flat, views


class MLP:
    def __init__(
        self,
        hidden=(128, 64, 32),
        optimizer="sgd",
        schedule="constant",
        shuffle=True,
        alpha=1e-4,
        lr=0.01,
        batch_size=32,
        epochs=50,
        momentum=0.9,
        beta1=0.9,
        beta2=0.999,
        epsilon=1e-8,
        lbfgs_maxiter=200,
    ):
        self.hidden = tuple(hidden)
        self.optimizer = optimizer
        self.schedule = schedule
        self.shuffle = shuffle
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.lbfgs_maxiter = lbfgs_maxiter

    def _rate(self, epoch):
        if self.schedule == "constant":
            return self.lr
        if self.schedule == "invscaling":
            return self.lr / np.sqrt(epoch)
        raise ValueError(f"unknown learning-rate schedule {self.schedule!r}")

    def fit(self, X, y_idx, n_classes, rng):
        n, d = X.shape
        sizes = (d, *self.hidden, n_classes)
        self.weights_, self.biases_ = init_params(sizes, rng)
        Y = np.zeros((n, n_classes))
        Y[np.arange(n), y_idx] = 1.0
        if self.optimizer == "lbfgs":
            self._fit_lbfgs(X, Y)
        else:
            self._fit_minibatch(X, Y, rng)
        return self

    def _fit_minibatch(self, X, Y, rng):
        n_w = len(self.weights_)
        shapes = [p.shape for p in self.weights_ + self.biases_]
        theta, views = _flat_views(shapes)
        for v, p in zip(views, self.weights_ + self.biases_):
            v[...] = p
        grad, gviews = _flat_views(shapes)
        W, b = views[:n_w], views[n_w:]
        gW, gb = gviews[:n_w], gviews[n_w:]
        vel = np.zeros_like(theta)
        m1 = np.zeros_like(theta)
        m2 = np.zeros_like(theta)
        tmp = np.empty_like(theta)
        step = 0
        n = X.shape[0]
        for epoch in range(1, self.epochs + 1):
            lr = self._rate(epoch)
            order = rng.permutation(n) if self.shuffle else np.arange(n)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                _backprop(W, b, X[idx], Y[idx], self.alpha, gW, gb)
                step += 1
                if self.optimizer == "sgd":
                    np.multiply(grad, lr, out=tmp)
                    theta -= tmp
                elif self.optimizer == "nesterov":
                    vel *= self.momentum
                    np.multiply(grad, lr, out=tmp)
                    vel -= tmp
                    # theta += momentum * vel - lr * grad
                    theta -= tmp
                    np.multiply(vel, self.momentum, out=tmp)
                    theta += tmp
                elif self.optimizer == "adam":
                    m1 *= self.beta1
                    np.multiply(grad, 1 - self.beta1, out=tmp)
                    m1 += tmp
                    m2 *= self.beta2
                    np.multiply(grad, grad, out=tmp)
                    tmp *= 1 - self.beta2
                    m2 += tmp
                    lr_t = lr / (1 - self.beta1**step)
                    # tmp = sqrt(v_hat) + eps
                    np.multiply(m2, 1.0 / (1 - self.beta2**step), out=tmp)
                    np.sqrt(tmp, out=tmp)
                    tmp += self.epsilon
                    np.divide(m1, tmp, out=tmp)
                    tmp *= lr_t
                    theta -= tmp
                else:
                    raise ValueError(f"unknown optimizer {self.optimizer!r}")
        self.weights_ = [w.copy() for w in W]
        self.biases_ = [v.copy() for v in b]

    def _fit_lbfgs(self, X, Y):
        shapes = [W.shape for W in self.weights_] + [b.shape for b in self.biases_]
        sizes = [int(np.prod(s)) for s in shapes]
        n_w = len(self.weights_)

        def unpack(theta):
            parts, pos = [], 0
            for shape, size in zip(shapes, sizes):
                parts.append(theta[pos:pos + size].reshape(shape))
                pos += size
            return parts[:n_w], parts[n_w:]

        def objective(theta):
            W, b = unpack(theta)
            value, gW, gb = mlp_gradient(W, b, X, Y, self.alpha)
            return value, np.concatenate([g.ravel() for g in gW + gb])

        theta0 = np.concatenate([p.ravel() for p in self.weights_ + self.biases_])
        res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                       options={"maxiter": self.lbfgs_maxiter})
        W, b = unpack(res.x)
        self.weights_ = [w.copy() for w in W]
        self.biases_ = [v.copy() for v in b]

    def predict_proba(self, X):
        return forward(self.weights_, self.biases_, X)[1]

    def predict_index(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def get_state(self):
        return {"weights": list(self.weights_), "biases": list(self.biases_)}

    def set_state(self, state):
        self.weights_ = [np.asarray(w, dtype=np.float64) for w in state["weights"]]
        self.biases_ = [np.asarray(b, dtype=np.float64) for b in state["biases"]]
        return self
