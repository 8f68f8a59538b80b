"""Frozen reference values produced by ``make_oracles.py``."""

X_PAIR = ([0.3, -0.2], [-0.1, 0.5])
GAMMA_PAIR = [1.3, 0.7]
RQ_ALPHA = 2.5
KERNEL_PAIR = {
    'gaussian': {
        'value': 0.7747227930507133,
        'dx': [-0.5237126081022823, 0.2657299180163947],
        'cross_hessian': [[0.9552517971785628, 0.1796334245790828], [0.1796334245790828, 0.2884688067152261]],
    },
    'matern': {
        'value': 0.7971991793778698,
        'dx': [-0.4387945454275676, 0.2226427944994906],
        'cross_hessian': [[0.699283447880305, 0.20179304745738835], [0.20179304745738835, 0.215672059144414]],
    },
    'ratquad': {
        'value': 0.7842372992705183,
        'dx': [-0.4810311353841489, 0.24407349029106956],
        'cross_hessian': [[0.7895047357223642, 0.20959182579753946], [0.20959182579753946, 0.24233026640484745]],
    },
}

X_DATA = [[0.1, 0.2], [0.7, -0.3], [-0.4, 0.5]]
GAMMA_DATA = [0.8, 1.2]
X_QUERY = [0.2, 0.1]
COND_MAX = 10000000000.0
SURROGATE = {
    'gaussian': {'eta': 4.071141118456245e-10, 'beta': 0.26027536839568494, 'sigma_k2': 0.4484265746696073, 'mu': 0.218638109751767, 'ratio': 4.5912963473231716e-07, 'mll': 13.500233092386322},
    'matern': {'eta': 3.8901114882711495e-10, 'beta': 0.2404760442933677, 'sigma_k2': 0.3779336208910333, 'mu': 0.21841714116581185, 'ratio': 0.00019975095788222236, 'mll': 9.15681088723744},
    'ratquad': {'eta': 3.9801043389075414e-10, 'beta': 0.23816555014587337, 'sigma_k2': 0.3988418447569401, 'mu': 0.21886905129924733, 'ratio': 2.975727355707348e-06, 'mll': 11.268863942275857},
}
NOISY_SIGMA_K = 1.5
NOISY_SIGMA_GRAD = 0.1
NOISY_MLL = 3.7618513905961914
X_BETA = [[0.0, 0.4], [0.9, -0.2], [-0.6, -0.8]]
BETA_ARGMAX = 0.6034437517129981
X_SIGMA = [[0.2, -0.1], [-0.5, 0.6]]
SIGMA_K2_ARGMAX = 0.5663929788831401
