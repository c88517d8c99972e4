from rest_framework.views import exception_handler
from rest_framework.response import Response
from rest_framework import status

from .exceptions import EdgeStreamError, ConfigError


def custom_exception_handler(exc, context):
    """
    Custom exception handler to format all API errors into a consistent structure.
    """
    if isinstance(exc, EdgeStreamError):
        code = status.HTTP_400_BAD_REQUEST if isinstance(exc, ConfigError) else status.HTTP_409_CONFLICT
        return Response({
            'error': True,
            'code': exc.code,
            'message': exc.message,
            'details': exc.details or None,
        }, status=code)

    # Call REST framework's default exception handler first,
    # to get the standard error response.
    response = exception_handler(exc, context)

    if response is not None:
        custom_response_data = {
            'error': True,
            'code': response.status_code,
            'message': str(exc),
            'details': response.data
        }

        # e.g., for NotFound, MethodNotAllowed
        if isinstance(response.data, dict) and 'detail' in response.data:
            custom_response_data['message'] = response.data['detail']
            custom_response_data['details'] = None
        elif isinstance(response.data, list):
            custom_response_data['message'] = 'One or more validation errors occurred.'
        elif isinstance(response.data, dict):
            custom_response_data['message'] = 'Input validation failed.'

        response.data = custom_response_data

    return response


def flatten_errors(errors, prefix=''):
    """Turn nested serializer errors into 'path.to.field: message' lines."""
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            path = f'{prefix}.{key}' if prefix else str(key)
            lines.extend(flatten_errors(value, path))
    elif isinstance(errors, list):
        for index, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                lines.extend(flatten_errors(value, f'{prefix}[{index}]'))
            else:
                lines.append(f'{prefix}: {value}' if prefix else str(value))
    else:
        lines.append(f'{prefix}: {errors}' if prefix else str(errors))
    return lines
