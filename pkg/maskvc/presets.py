PRESETS = {
    'full': {
        'mel_bins': 80,
        'converter': {
            'first': 64,
            'down': 256,
            'residual': 256,
            'residual_hidden': 512,
            'residual_blocks': 6,
            'up': (128, 64),
        },
        'discriminator': (128, 256, 512, 1024),
    },
    'desk': {
        'mel_bins': 80,
        'converter': {
            'first': 8,
            'down': 32,
            'residual': 32,
            'residual_hidden': 64,
            'residual_blocks': 6,
            'up': (16, 8),
        },
        'discriminator': (16, 32, 64, 128),
    },
    # gradient checks run on 8 x 16 inputs
    'micro': {
        'mel_bins': 8,
        'converter': {
            'first': 1,
            'down': 4,
            'residual': 4,
            'residual_hidden': 8,
            'residual_blocks': 6,
            'up': (2, 1),
        },
        'discriminator': (2, 4, 8, 16),
    },
}

# Two stride-2 stages in the converter.
TIME_DOWNSAMPLE = 4
FREQ_DOWNSAMPLE = 4

# label, mask policy label, converter input channels
ABLATION_MATRICES = {
    'mask_size': (
        ('FIF 0', 'FIF 0', 2),
        ('FIF 25', 'FIF 25', 2),
        ('FIF 0-25', 'FIF 0-25', 2),
        ('FIF 0-50', 'FIF 0-50', 2),
        ('FIF 0-75', 'FIF 0-75', 2),
    ),
    'mask_type': (
        ('FIF', 'FIF 0-50', 2),
        ('FIF_NS', 'FIF_NS 0-50', 2),
        ('FIS', 'FIS 0-50', 2),
        ('FIP', 'FIP 0-50', 2),
    ),
    'mask_channel': (
        ('Mask', 'FIF 0-50', 2),
        ('V2', 'FIF 0', 1),
    ),
}

# Full-scale VCC 2018 MCD [dB] per (variant, speaker pair). Not reproducible at desk scale.
PUBLISHED_REFERENCE_MCD = {
    ('FIF 0', 'SF-TF'): 7.66, ('FIF 0', 'SM-TM'): 7.11, ('FIF 0', 'SF-TM'): 6.91, ('FIF 0', 'SM-TF'): 8.11,
    ('FIF 25', 'SF-TF'): 7.45, ('FIF 25', 'SM-TM'): 6.85, ('FIF 25', 'SF-TM'): 6.76, ('FIF 25', 'SM-TF'): 7.84,
    ('FIF 0-25', 'SF-TF'): 7.45, ('FIF 0-25', 'SM-TM'): 6.83, ('FIF 0-25', 'SF-TM'): 6.78, ('FIF 0-25', 'SM-TF'): 7.80,
    ('FIF 0-50', 'SF-TF'): 7.37, ('FIF 0-50', 'SM-TM'): 6.77, ('FIF 0-50', 'SF-TM'): 6.73, ('FIF 0-50', 'SM-TF'): 7.64,
    ('FIF 0-75', 'SF-TF'): 7.40, ('FIF 0-75', 'SM-TM'): 6.75, ('FIF 0-75', 'SF-TM'): 6.72, ('FIF 0-75', 'SM-TF'): 7.66,
    ('FIF', 'SF-TF'): 7.37, ('FIF', 'SM-TM'): 6.77, ('FIF', 'SF-TM'): 6.73, ('FIF', 'SM-TF'): 7.64,
    ('FIF_NS', 'SF-TF'): 7.53, ('FIF_NS', 'SM-TM'): 7.00, ('FIF_NS', 'SF-TM'): 6.90, ('FIF_NS', 'SM-TF'): 7.97,
    ('FIS', 'SF-TF'): 7.52, ('FIS', 'SM-TM'): 6.95, ('FIS', 'SF-TM'): 6.88, ('FIS', 'SM-TF'): 7.94,
    ('FIP', 'SF-TF'): 7.65, ('FIP', 'SM-TM'): 6.97, ('FIP', 'SF-TM'): 7.09, ('FIP', 'SM-TF'): 8.24,
    ('Mask', 'SF-TF'): 7.37, ('Mask', 'SM-TM'): 6.77, ('Mask', 'SF-TM'): 6.73, ('Mask', 'SM-TF'): 7.64,
    ('V2', 'SF-TF'): 7.66, ('V2', 'SM-TM'): 7.07, ('V2', 'SF-TM'): 6.96, ('V2', 'SM-TF'): 8.07,
}
