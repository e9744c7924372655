"""Forward-mode dual numbers with numpy payloads.

Nesting duals (a dual whose parts are duals) yields higher derivatives:
seeding three levels with directions e_i, e_j, e_l gives d_i d_j d_l f in
the innermost epsilon product.
"""
import numpy as np


class Dual:
    __slots__ = ("a", "b")
    __array_priority__ = 1000

    def __init__(self, a, b=0.0):
        self.a = a
        self.b = b

    def __add__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a + o.a, self.b + o.b)
        return Dual(self.a + o, self.b)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a - o.a, self.b - o.b)
        return Dual(self.a - o, self.b)

    def __rsub__(self, o):
        return Dual(o - self.a, -self.b)

    def __neg__(self):
        return Dual(-self.a, -self.b)

    def __mul__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a * o.a, self.a * o.b + self.b * o.a)
        return Dual(self.a * o, self.b * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Dual):
            return Dual(self.a / o.a, (self.b * o.a - self.a * o.b) / (o.a * o.a))
        return Dual(self.a / o, self.b / o)

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise ValueError("only non-negative integer powers are supported")
        out = 1.0
        for _ in range(n):
            out = self * out
        return out


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.a), cos(x.a) * x.b)
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.a), -sin(x.a) * x.b)
    return np.cos(x)


def _seed(x, dirs):
    """Coordinates as nested duals; level m carries direction dirs[m]."""
    coords = [np.asarray(x[:, c], dtype=float) for c in range(3)]
    for m, d in enumerate(dirs):
        coords = [Dual(coords[c], _unit_like(coords[c], float(c == d))) for c in range(3)]
    return coords


def _unit_like(template, value):
    # derivative seed with the same nesting depth as the template
    if isinstance(template, Dual):
        return Dual(_unit_like(template.a, value), _zero_like(template.b))
    return np.full(np.shape(template), value)


def _zero_like(template):
    if isinstance(template, Dual):
        return Dual(_zero_like(template.a), _zero_like(template.b))
    return np.zeros(np.shape(template))


def _part(v, path):
    # path is a tuple of 'a'/'b' from outermost to innermost
    for p in path:
        if not isinstance(v, Dual):
            return np.zeros(1) if p == "b" else v
        v = v.a if p == "a" else v.b
    return v


def derivatives(fun, x, order=3):
    """Value, gradient, Hessian and third-derivative tensor of a scalar function.

    ``fun`` maps three coordinate arrays (possibly duals) to a scalar; ``x`` is
    (n, 3).  Returns a list of arrays of shapes (n,), (n,3), (n,3,3), (n,3,3,3)
    truncated to ``order``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    val = np.broadcast_to(np.asarray(fun(*[x[:, c] for c in range(3)]), dtype=float), (n,)).copy()
    out = [val]
    if order >= 1:
        g = np.zeros((n, 3))
        for i in range(3):
            v = fun(*_seed(x, [i]))
            g[:, i] = np.broadcast_to(_part(v, ("b",)), (n,))
        out.append(g)
    if order >= 2:
        H = np.zeros((n, 3, 3))
        for i in range(3):
            for j in range(i, 3):
                v = fun(*_seed(x, [i, j]))
                # outer level is direction j, inner level direction i
                H[:, i, j] = H[:, j, i] = np.broadcast_to(_part(v, ("b", "b")), (n,))
        out.append(H)
    if order >= 3:
        T = np.zeros((n, 3, 3, 3))
        for i in range(3):
            for j in range(i, 3):
                for l in range(j, 3):
                    v = fun(*_seed(x, [i, j, l]))
                    val3 = np.broadcast_to(_part(v, ("b", "b", "b")), (n,))
                    for p in {(i, j, l), (i, l, j), (j, i, l), (j, l, i), (l, i, j), (l, j, i)}:
                        T[(slice(None),) + p] = val3
        out.append(T)
    return out
